"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a NumPy/SciPy
fallback is selected at import time), so a failed compile downgrades to
a pure-Python install instead of aborting.
"""

import sys

from setuptools import setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        sys.stderr.write(f"upa: building without compiled kernels ({exc})\n")
        return []
    ext = Extension(
        "upa.kernels._ckernels",
        ["src/upa/kernels/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions())
