"""Build script for the optional compiled kernel extension.

The package is pure Python plus one Cython extension holding the hot
convolution kernels (im2col / col2im / depthwise). If the extension cannot
be built the package still works through the numpy fallback selected at
import time in recalib.engine.backend.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "recalib.engine._native",
        ["src/recalib/engine/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
