from pathlib import Path

from setuptools import find_packages, setup

requirements = [
    line.strip()
    for line in Path(__file__).with_name('requirements.txt').read_text().splitlines()
    if line.strip() and not line.startswith('#') and not line.startswith(('pytest', 'black', 'flake8'))
]

setup(
    name='riskgrid',
    version='1.0.0',
    description='Spatial risk-terrain modelling: fishnet features, Moran clusters, count and spatial models',
    packages=find_packages(exclude=('tests', 'tests.*')),
    python_requires='>=3.9',
    install_requires=requirements,
    entry_points={'console_scripts': ['riskgrid=riskgrid.cli:main']},
)
