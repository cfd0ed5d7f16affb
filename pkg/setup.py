import os

from setuptools import Extension, setup

PYX = os.path.join("src", "clustercap", "_kernels", "_fast.pyx")
C = os.path.join("src", "clustercap", "_kernels", "_fast.c")


def extensions():
    if os.environ.get("CLUSTERCAP_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize

        return cythonize(
            [Extension("clustercap._kernels._fast", [PYX])],
            language_level=3,
        )
    except ImportError:
        if os.path.exists(C):
            return [Extension("clustercap._kernels._fast", [C])]
        return []


try:
    setup(ext_modules=extensions())
except Exception:
    # Building the accelerator is best-effort; the pure-Python kernels are
    # selected at import time when the extension is unavailable.
    setup(ext_modules=[])
