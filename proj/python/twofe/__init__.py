try:
    from ._twofe import *  # noqa: F401,F403
    from ._twofe import __doc__  # noqa: F401
except ImportError:  # built in-tree without packaging
    from _twofe import *  # noqa: F401,F403
    from _twofe import __doc__  # noqa: F401
