"""Client-side tests of the external denoiser protocol against a local stub."""

import os
import sys

import numpy as np
import pytest

from stmp.denoisers import (
    DimensionMismatchError,
    ExternalDenoiserClient,
    NonFinitePayloadError,
    ProtocolError,
    TransportError,
    denoise_tweedie,
)
from stmp.msgpass import StmpConfig, run_stmp
from stmp.operators import make_operator, sample_model
from stmp.priors import GaussianPrior, sample_prior

STUB = os.path.join(os.path.dirname(__file__), "stub_denoiser.py")


def spawn(mode: str, n: int) -> ExternalDenoiserClient:
    return ExternalDenoiserClient.spawn([sys.executable, STUB, mode], n)


class TestProtocol:
    def test_matches_in_process_denoiser(self):
        prior = GaussianPrior(0.0, 1.0)
        rng = np.random.default_rng(0)
        with spawn("ok", 32) as client:
            for _ in range(50):
                v = float(np.exp(rng.uniform(np.log(1e-2), np.log(5.0))))
                r = rng.standard_normal(32)
                remote = client.denoise(r, v)
                local = denoise_tweedie(prior, r, v)
                assert np.max(np.abs(remote.mean - local.mean)) < 1e-9
                assert abs(remote.variance - local.variance) < 1e-9

    def test_wrong_length_response(self):
        with spawn("wrong_len", 8) as client:
            with pytest.raises(DimensionMismatchError):
                client.denoise(np.zeros(8), 1.0)

    def test_connection_closed_mid_response(self):
        with spawn("close_mid", 8) as client:
            with pytest.raises(TransportError):
                client.denoise(np.zeros(8), 1.0)

    def test_nan_payload(self):
        with spawn("nan", 8) as client:
            with pytest.raises(NonFinitePayloadError):
                client.denoise(np.zeros(8), 1.0)

    def test_rejected_handshake(self):
        with pytest.raises(ProtocolError):
            spawn("reject", 8)

    def test_request_length_validated_client_side(self):
        with spawn("ok", 8) as client:
            with pytest.raises(DimensionMismatchError):
                client.denoise(np.zeros(9), 1.0)


class TestEngineWithExternalBackend:
    def test_run_aborts_cleanly_on_transport_failure(self):
        n = 64
        prior = GaussianPrior(0.0, 1.0)
        op = make_operator(32, n, "dct", seed=0)
        x = sample_prior(prior, n, np.random.default_rng(1))
        model = sample_model(op, x, 0.01, seed=2)
        cfg = StmpConfig(max_iters=5, init_variance=1.0)
        with spawn("close_mid", n) as client:
            with pytest.raises(TransportError):
                run_stmp(model, client, cfg, ground_truth=x)

    def test_external_run_matches_in_process(self):
        n = 128
        prior = GaussianPrior(0.0, 1.0)
        op = make_operator(64, n, "dct", seed=3)
        x = sample_prior(prior, n, np.random.default_rng(4))
        model = sample_model(op, x, 0.04, seed=5)
        cfg = StmpConfig(max_iters=20, init_variance=1.0)
        local_out, local_tr = run_stmp(model, prior, cfg, ground_truth=x)
        with spawn("ok", n) as client:
            remote_out, remote_tr = run_stmp(model, client, cfg, ground_truth=x)
        assert abs(local_tr.nmse[-1] - remote_tr.nmse[-1]) < 1e-6
        np.testing.assert_allclose(remote_out.mean, local_out.mean, atol=1e-7)
