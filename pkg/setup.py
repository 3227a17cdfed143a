"""Build the optional Cython rANS kernel.

The package works without it: ``oecpipe.rans`` falls back to a pure-Python
kernel when the extension is missing. Set ``OECPIPE_NO_EXT=1`` to skip the
build entirely.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OECPIPE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "oecpipe.rans._kernel_ext",
                    ["src/oecpipe/rans/_kernel_ext.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
