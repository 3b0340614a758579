import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off / -fno-fast-math: the compiled kernels must be bit-identical
# to the pure-numpy fallback, so FMA contraction and FP reassociation are disabled.
ext_modules = [
    Extension(
        "gapflow.renderer._kernels_cy",
        sources=["src/gapflow/renderer/_kernels_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-fno-fast-math", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
