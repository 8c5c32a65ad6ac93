#!/usr/bin/env python3

import setuptools
import os

try:
    with open(os.path.dirname(os.path.abspath(__file__)) + "/README.md") as readme_file:
        long_description = readme_file.read()
except (FileNotFoundError, FileExistsError):
    long_description = "Text-bridged graph pre-training and cross-domain transfer for ID-based recommendation."

setuptools.setup(
    name="textbridge-tools",
    version="0.1.0",
    description="Text-bridged graph pre-training and cross-domain transfer for ID-based recommendation",
    long_description_content_type="text/markdown",
    long_description=long_description,
    packages=setuptools.find_packages(),
    package_data={
        "pytextbridge": [
            "data/*.yml"
        ],
        "pytextbridge.tests": [
            "data/*"
        ]
    },
    entry_points={
        "console_scripts": [
            "textbridge = pytextbridge.textbridge_tools:main",
        ]
    },
    test_suite="nose.collector",
    tests_require=[
        "nose >= 1.3"
    ],
    install_requires=[
        "numpy >= 1.22",
        "scipy >= 1.7",
        "pyyaml >= 5.1"
    ],
    extras_require={
        "faiss": ["faiss-cpu >= 1.7"]
    },
    python_requires=">=3.8",
    license="GPLv3",
    classifiers=[
        "Programming Language :: Python :: 3 :: Only",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Development Status :: 3 - Alpha"
    ]
)
