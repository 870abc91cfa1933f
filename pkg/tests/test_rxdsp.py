"""Receiver DSP tests: demux, matched filter, CDC, DBP, CPR, decisions, loading."""

import math

import numpy as np
import pytest

from fiberwave.core import (
    ConfigError,
    DualPolField,
    EdfaParams,
    FiberSpanParams,
    LinkConfig,
    NumericError,
    PrngSpec,
    WdmConfig,
)
from fiberwave.metrics import esnr, nmse
from fiberwave.rxdsp import (
    RxSymbols,
    cdc,
    cpr,
    demux_cut,
    hard_decide_qam16,
    load_noise_to_target_ber,
    matched_filter_downsample,
    multi_channel_dbp,
)
from fiberwave.ssfm import propagate_link
from fiberwave.txdsp import BitStream, generate_bits, map_qam16, transmit


def small_cfg(**kw) -> WdmConfig:
    base = dict(num_channels=3, symbol_rate_baud=50e9, launch_power_dbm_per_channel=0.0)
    base.update(kw)
    return WdmConfig(**base)


def rx_chain_linear(frame, cfg, distance_km=0.0, beta2=0.0):
    """Demux CUT, optional CDC, matched filter, CPR."""
    field = frame.field
    cut = demux_cut(field, cfg)
    if distance_km:
        cut = cdc(cut, beta2, distance_km)
    rx = matched_filter_downsample(cut, cfg.rolloff, cfg.sps)
    return cpr(rx, frame.cut_symbols())


class TestDemuxCut:
    def test_single_channel_identity_up_to_filtering(self):
        cfg = small_cfg(num_channels=1)
        frame = transmit(cfg, PrngSpec(seed=3), num_symbols=256)
        out = demux_cut(frame.field, cfg)
        assert nmse(frame.field, out) < 1e-12

    def test_five_channel_round_trip(self):
        cfg = WdmConfig(num_channels=5, launch_power_dbm_per_channel=0.0)
        frame = transmit(cfg, PrngSpec(seed=4), num_symbols=512)
        for k in range(1, 6):
            cut = demux_cut(frame.field, cfg, k)
            rx = matched_filter_downsample(cut, cfg.rolloff, cfg.sps)
            rec = cpr(rx, frame.symbols[k - 1])
            assert nmse(frame.symbols[k - 1], rec) < 1e-6

    def test_default_channel_is_center(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=5), num_symbols=128)
        assert np.allclose(
            demux_cut(frame.field, cfg).x_samples,
            demux_cut(frame.field, cfg, cfg.center_channel).x_samples,
        )
        assert cfg.center_channel == 2

    def test_out_of_band_energy_removed(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=6), num_symbols=128)
        cut = demux_cut(frame.field, cfg)
        spec = np.fft.fft(cut.x_samples)
        freqs = np.fft.fftfreq(cut.num_samples, d=1.0 / cut.sample_rate_hz)
        outside = np.abs(freqs) >= cfg.spacing_hz / 2.0
        # brick wall applied in the frequency domain; re-analysis leaves only
        # float rounding outside the band
        assert np.max(np.abs(spec[outside])) < 1e-12 * np.max(np.abs(spec))

    def test_channel_range_checked(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=7), num_symbols=64)
        with pytest.raises(ConfigError):
            demux_cut(frame.field, cfg, 4)

    def test_rate_mismatch_rejected(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=8), num_symbols=64)
        bad = DualPolField(
            frame.field.x_samples, frame.field.y_samples, sample_rate_hz=1e9
        )
        with pytest.raises(ConfigError):
            demux_cut(bad, cfg)


class TestBackToBack:
    def test_ber_zero_esnr_above_40_db(self):
        cfg = WdmConfig(num_channels=5, launch_power_dbm_per_channel=0.0)
        frame = transmit(cfg, PrngSpec(seed=11), num_symbols=512)
        rec = rx_chain_linear(frame, cfg)
        assert esnr(rec, frame.cut_symbols()) > 40.0
        bits = hard_decide_qam16(rec)
        tx_bits = frame.cut_bits()
        assert np.array_equal(bits.bits, tx_bits.bits)

    def test_alignment_peak_at_lag_zero(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=12), num_symbols=256)
        rec = rx_chain_linear(frame, cfg)
        tx = frame.cut_symbols()
        corr = np.abs(np.fft.ifft(np.fft.fft(rec.x) * np.conj(np.fft.fft(tx.x))))
        assert np.argmax(corr) == 0

    def test_misaligned_frame_rejected(self):
        f = DualPolField(np.ones(100, complex), np.ones(100, complex), sample_rate_hz=1e12)
        with pytest.raises(ConfigError):
            matched_filter_downsample(f, 0.1, 7)


class TestCdc:
    def test_zero_distance_identity(self):
        f = DualPolField(
            np.arange(8, dtype=complex), np.arange(8, dtype=complex), sample_rate_hz=1e12
        )
        assert cdc(f, -21.68, 0.0) is f

    def test_inverts_dispersive_propagation(self):
        rng = np.random.default_rng(13)
        n = 4096
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        f = DualPolField(x, y, sample_rate_hz=1e12)
        span = FiberSpanParams(attenuation_db_per_km=0.0, span_length_km=80.0, gamma_per_w_km=0.0)
        edfa = EdfaParams(gain_db=0.0, ase_enabled=False)
        link = LinkConfig.uniform(10, span, edfa)
        out = propagate_link(f, link).field
        back = cdc(out, span.beta2_ps2_per_km, link.total_distance_km)
        assert nmse(f, back) < 1e-12

    def test_distance_additivity(self):
        rng = np.random.default_rng(14)
        n = 1024
        f = DualPolField(
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
            sample_rate_hz=1e12,
        )
        b2 = -21.68261939141489
        once = cdc(f, b2, 300.0)
        twice = cdc(cdc(f, b2, 120.0), b2, 180.0)
        assert nmse(once, twice) < 1e-24

    def test_opposite_distances_cancel(self):
        rng = np.random.default_rng(15)
        n = 512
        f = DualPolField(
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
            sample_rate_hz=1e12,
        )
        round_trip = cdc(cdc(f, -21.68, 440.0), -21.68, -440.0)
        assert nmse(f, round_trip) < 1e-24


def noiseless_link(num_spans, gamma=1.3):
    span = FiberSpanParams(gamma_per_w_km=gamma)
    edfa = EdfaParams(ase_enabled=False)
    return LinkConfig.uniform(num_spans, span, edfa)


class TestMultiChannelDbp:
    def test_recovers_tx_field_with_recorded_plans(self):
        cfg = small_cfg(launch_power_dbm_per_channel=4.0)
        frame = transmit(cfg, PrngSpec(seed=21), num_symbols=256)
        link = noiseless_link(2)
        result = propagate_link(frame.field, link)
        back = multi_channel_dbp(result.field, link, plans=result.span_plans)
        assert nmse(frame.field, back) < 1e-6
        assert back.position_km == 0.0

    def test_replans_without_recorded_plans(self):
        cfg = small_cfg(launch_power_dbm_per_channel=4.0)
        frame = transmit(cfg, PrngSpec(seed=22), num_symbols=256)
        link = noiseless_link(2)
        result = propagate_link(frame.field, link)
        with_plans = multi_channel_dbp(result.field, link, plans=result.span_plans)
        without = multi_channel_dbp(result.field, link)
        # recorded plans mirror the forward run step for step, so the two
        # discretization errors cancel exactly; re-derived plans cannot
        # bit-match and only invert to the single-run discretization error
        assert nmse(frame.field, with_plans) < 1e-12
        assert nmse(frame.field, without) < 1e-3

    def test_linear_link_dbp_equals_cdc(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=23), num_symbols=256)
        link = noiseless_link(3, gamma=0.0)
        out = propagate_link(frame.field, link).field
        via_dbp = multi_channel_dbp(out, link)
        via_cdc = cdc(out, link.spans[0][0].beta2_ps2_per_km, link.total_distance_km)
        assert nmse(via_cdc, via_dbp) < 1e-12

    def test_plan_count_mismatch_rejected(self):
        cfg = small_cfg()
        frame = transmit(cfg, PrngSpec(seed=24), num_symbols=64)
        link = noiseless_link(2)
        result = propagate_link(frame.field, link)
        with pytest.raises(ConfigError):
            multi_channel_dbp(result.field, link, plans=result.span_plans[:1])

    def test_full_chain_ber_zero(self):
        cfg = small_cfg(launch_power_dbm_per_channel=2.0)
        frame = transmit(cfg, PrngSpec(seed=25), num_symbols=256)
        link = noiseless_link(2)
        result = propagate_link(frame.field, link)
        back = multi_channel_dbp(result.field, link, plans=result.span_plans)
        rx = matched_filter_downsample(demux_cut(back, cfg), cfg.rolloff, cfg.sps)
        rec = cpr(rx, frame.cut_symbols())
        bits = hard_decide_qam16(rec)
        assert np.array_equal(bits.bits, frame.cut_bits().bits)


class TestCpr:
    def make_symbols(self, seed, n=2048):
        bits = generate_bits(PrngSpec(seed=seed), 8 * n)
        s = map_qam16(bits)
        return s, RxSymbols(x=s.x.copy(), y=s.y.copy())

    def test_identity(self):
        tx, rx = self.make_symbols(31)
        out = cpr(rx, tx)
        assert nmse(tx, out) < 1e-24

    def test_single_rotation_removed(self):
        tx, _ = self.make_symbols(32)
        rx = RxSymbols(x=tx.x * np.exp(0.3j), y=tx.y * np.exp(0.3j))
        out = cpr(rx, tx)
        assert nmse(tx, out) < 1e-18

    def test_complex_gain_removed(self):
        tx, _ = self.make_symbols(33)
        rx = RxSymbols(x=tx.x * 0.8 * np.exp(1.1j), y=tx.y * 1.3 * np.exp(-0.7j))
        out = cpr(rx, tx)
        assert nmse(tx, out) < 1e-18

    def test_blockwise_phase_removed(self):
        tx, _ = self.make_symbols(34)
        n = tx.x.size
        # phase jumps every 512 symbols, constant within each block
        phases = np.repeat(np.array([0.1, -0.4, 0.9, 2.0]), n // 4)
        rx = RxSymbols(x=tx.x * np.exp(1j * phases), y=tx.y * np.exp(1j * phases))
        out = cpr(rx, tx, block_size=512)
        assert nmse(tx, out) < 1e-18

    def test_esnr_never_degraded(self):
        tx, _ = self.make_symbols(35)
        rng = np.random.default_rng(36)
        n = tx.x.size
        noisy = RxSymbols(
            x=tx.x * np.exp(0.2j) + 0.05 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
            y=tx.y * np.exp(-0.1j) + 0.05 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
        )
        before = esnr(noisy, tx)
        after = esnr(cpr(noisy, tx), tx)
        assert after >= before

    def test_mismatched_lengths_rejected(self):
        tx, rx = self.make_symbols(37, n=512)
        short, _ = self.make_symbols(38, n=256)
        with pytest.raises(ConfigError):
            cpr(rx, short)

    def test_zero_energy_rejected(self):
        tx, _ = self.make_symbols(39, n=64)
        zeros = RxSymbols(x=np.zeros(64, complex), y=np.zeros(64, complex))
        with pytest.raises(NumericError):
            cpr(zeros, tx)


class TestHardDecide:
    def test_noiseless_round_trip(self):
        bits = generate_bits(PrngSpec(seed=41), 8 * 4096)
        s = map_qam16(bits)
        out = hard_decide_qam16(RxSymbols(x=s.x, y=s.y))
        assert np.array_equal(out.bits, bits.bits)
        assert out.prng is None

    def test_scale_invariant(self):
        bits = generate_bits(PrngSpec(seed=42), 8 * 1024)
        s = map_qam16(bits)
        out = hard_decide_qam16(RxSymbols(x=2.7 * s.x, y=0.4 * s.y))
        assert np.array_equal(out.bits, bits.bits)

    def test_small_noise_no_errors(self):
        bits = generate_bits(PrngSpec(seed=43), 8 * 1024)
        s = map_qam16(bits)
        rng = np.random.default_rng(44)
        jitter = 0.01 * (rng.standard_normal(1024) + 1j * rng.standard_normal(1024))
        out = hard_decide_qam16(RxSymbols(x=s.x + jitter, y=s.y - jitter))
        assert np.array_equal(out.bits, bits.bits)

    def test_all_sixteen_points(self):
        # every constellation point demaps to the bits that produced it
        quads = np.array(
            [[b0, b1, b2, b3] for b0 in (0, 1) for b1 in (0, 1)
             for b2 in (0, 1) for b3 in (0, 1)],
            dtype=np.uint8,
        )
        bits = np.concatenate([quads.ravel(), quads.ravel()])
        s = map_qam16(BitStream(bits=bits))
        out = hard_decide_qam16(RxSymbols(x=s.x, y=s.y))
        assert np.array_equal(out.bits, bits)

    def test_zero_energy_rejected(self):
        with pytest.raises(NumericError):
            hard_decide_qam16(RxSymbols(x=np.zeros(8, complex), y=np.zeros(8, complex)))


class TestNoiseLoading:
    def clean_symbols(self, seed, n=7680):
        bits = generate_bits(PrngSpec(seed=seed), 8 * n)
        s = map_qam16(bits)
        return s, RxSymbols(x=s.x.copy(), y=s.y.copy()), bits

    def test_reaches_target(self):
        tx, rx, bits = self.clean_symbols(51)
        loaded, sigma = load_noise_to_target_ber(rx, tx, 0.04, PrngSpec(seed=52))
        assert sigma > 0
        decided = hard_decide_qam16(loaded)
        ber = np.count_nonzero(decided.bits != bits.bits) / bits.bits.size
        assert abs(ber - 0.04) <= 2e-3

    def test_deterministic(self):
        tx, rx, _ = self.clean_symbols(53)
        l1, s1 = load_noise_to_target_ber(rx, tx, 0.04, PrngSpec(seed=54))
        l2, s2 = load_noise_to_target_ber(rx, tx, 0.04, PrngSpec(seed=54))
        assert s1 == s2
        assert np.array_equal(l1.x, l2.x) and np.array_equal(l1.y, l2.y)

    def test_same_seed_same_unit_noise_across_signals(self):
        tx1, rx1, _ = self.clean_symbols(55)
        tx2, _, _ = self.clean_symbols(56)
        rx2 = RxSymbols(x=tx2.x * np.exp(0.05j), y=tx2.y * np.exp(0.05j))
        prng = PrngSpec(seed=57)
        l1, s1 = load_noise_to_target_ber(rx1, tx1, 0.04, prng)
        l2, s2 = load_noise_to_target_ber(rx2, tx2, 0.03, prng)
        u1 = (l1.x - rx1.x) / s1
        u2 = (l2.x - rx2.x) / s2
        assert np.allclose(u1, u2, rtol=1e-10, atol=1e-12)

    def test_unreachable_target_rejected(self):
        tx, rx, _ = self.clean_symbols(58, n=2048)
        rng = np.random.default_rng(59)
        noisy = RxSymbols(
            x=rx.x + 0.5 * (rng.standard_normal(2048) + 1j * rng.standard_normal(2048)),
            y=rx.y + 0.5 * (rng.standard_normal(2048) + 1j * rng.standard_normal(2048)),
        )
        with pytest.raises(NumericError):
            load_noise_to_target_ber(noisy, tx, 1e-4, PrngSpec(seed=60))

    def test_invalid_targets_rejected(self):
        tx, rx, _ = self.clean_symbols(61, n=256)
        for bad in (0.0, 0.5, 0.7, -0.1):
            with pytest.raises(ConfigError):
                load_noise_to_target_ber(rx, tx, bad, PrngSpec(seed=62))

    def test_already_at_target_returns_unmodified(self):
        tx, rx, _ = self.clean_symbols(63, n=1024)
        rng = np.random.default_rng(64)
        # preload to roughly the target, then ask for a target within tolerance
        sigma0 = 0.28
        noisy = RxSymbols(
            x=rx.x + sigma0 / math.sqrt(2) * (rng.standard_normal(1024) + 1j * rng.standard_normal(1024)),
            y=rx.y + sigma0 / math.sqrt(2) * (rng.standard_normal(1024) + 1j * rng.standard_normal(1024)),
        )
        decided = hard_decide_qam16(noisy)
        tx_bits = hard_decide_qam16(RxSymbols(x=tx.x, y=tx.y))
        pre = np.count_nonzero(decided.bits != tx_bits.bits) / tx_bits.bits.size
        loaded, sigma = load_noise_to_target_ber(noisy, tx, pre + 1e-3, PrngSpec(seed=65))
        assert sigma == 0.0
        assert loaded is noisy
