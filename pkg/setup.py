"""
Setup script for btforge
"""

from setuptools import setup, find_packages

setup(
    name="btforge",
    version="0.1.0",
    packages=find_packages(include=["btforge", "btforge.*"]),
    package_data={
        "btforge": ["data/*.txt", "data/*.yml", "data/tasks/*", "data/tasks/suite/*"],
    },
    license="MIT",
    install_requires=[
        "pyyaml>=5.1",
        "tqdm>=4.62.0",
        "numpy>=1.21",
        "Pillow>=9.1",
        "pydantic>=2.0",
        "requests>=2.25",
    ],
    entry_points={
        'console_scripts': [
            'btforge=btforge.cli:main',
        ],
    },
    python_requires='>=3.8',
)
