try:
    from ._semlink import *  # noqa: F401,F403
    from ._semlink import __doc__  # noqa: F401
except ImportError:
    # dev tree: the module lives in the CMake build directory, not the package
    from _semlink import *  # noqa: F401,F403
    from _semlink import __doc__  # noqa: F401
