"""Build script: compiles the optional Cython kernel extension.

The package works without the extension; pcis.kernels falls back to the
numpy implementation when `pcis._kernels` is missing.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    import numpy

    ext_modules = cythonize(
        [
            Extension(
                "pcis._kernels",
                ["src/pcis/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
