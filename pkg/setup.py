"""Optional compiled build of the runtime core.

The task trampoline, deque and stack allocator are plain Python modules.
When Cython and a C compiler are available they are additionally compiled
to extension modules, which cuts the per-task overhead roughly in half.
Set FORKLINE_PURE=1 to skip compilation; any build failure also falls back
to the pure-Python modules.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

CORE = ["src/forkline/task.py", "src/forkline/wsq.py", "src/forkline/cactus.py"]


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"forkline: compiled core unavailable ({exc}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"forkline: skipping {ext.name} ({exc})")


def extensions():
    if os.environ.get("FORKLINE_PURE") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(CORE, compiler_directives={"language_level": 3, "binding": True}, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
