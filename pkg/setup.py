"""Build the optional compiled convolution kernels.

The package works without them: ``switchvae.numerics.kernels`` falls back to
the numpy implementation when the extension is missing.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build without Cython
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "switchvae.numerics._vol2col",
                ["src/switchvae/numerics/_vol2col.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
