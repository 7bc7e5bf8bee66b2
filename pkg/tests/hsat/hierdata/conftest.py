import pytest

from hsat.hierdata.synthetic import generate_synthetic
from tests.hsat.helpers import TINY


@pytest.fixture(scope='module')
def tiny_dataset():
    return generate_synthetic(TINY, verify_snr=False)
