import os

from setuptools import setup

# -ffast-math is compile-only so crtfastmath.o (global flush-to-zero) is never linked.
# Set SUBJADAPT_PORTABLE=1 to build without host-specific instructions.
if os.environ.get("SUBJADAPT_PORTABLE"):
    cflags, libs = ["-O3"], []
else:
    cflags, libs = ["-O3", "-ffast-math", "-march=native"], ["mvec", "m"]

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("subjadapt._gru_ext", ["src/subjadapt/_gru_ext.pyx"], extra_compile_args=cflags,
                   libraries=libs)],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # pure-numpy fallback is selected at import time
    ext_modules = []

setup(ext_modules=ext_modules)
