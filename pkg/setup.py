#!/usr/bin/env python
"""The setup script."""


from setuptools import setup, find_packages


with open('README.rst') as readme_file:
    long_description = readme_file.read()

requirements = [
    'numpy>=1.17',
    'pandas>=1.0',
    'scipy>=1.4'
]

setup_requirements = [
]

test_requirements = [
    'hypothesis>=5',
    'pytest>=6',
]

setup(
    author="The fairaudit developers",
    python_requires='>=3.7',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Topic :: Scientific/Engineering :: Information Analysis',
        'Topic :: Scientific/Engineering :: Mathematics'
    ],
    description="Simultaneous statistical auditing of model performance across subpopulations.",
    entry_points={
        'console_scripts': ['fairaudit=fairaudit.cli:main'],
    },
    install_requires=requirements,
    license="BSD 3-clause",
    long_description=long_description,
    long_description_content_type='text/x-rst',
    include_package_data=True,
    keywords=['fairness', 'auditing', 'bootstrap', 'multiple testing', 'subgroup analysis'],
    name='fairaudit',
    packages=find_packages(include=['fairaudit', 'fairaudit.*']),
    setup_requires=setup_requirements,
    test_suite='tests',
    tests_require=test_requirements,
    version='0.1.0',
    zip_safe=False,
)
