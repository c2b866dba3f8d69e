import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wxrclean import io
from wxrclean.correction import MsgFrame
from wxrclean.geometry import ShadowSector, ShadowSectorSet, SumImage
from wxrclean.grid import DEFAULT_STATIONS, GridSpec, MaskRole, PixelMask, RadarFrame


@st.composite
def frames(draw):
    h = draw(st.integers(1, 12))
    w = draw(st.integers(1, 12))
    labels = draw(arrays(np.uint8, (h, w), elements=st.integers(0, 13)))
    valid = draw(arrays(bool, (h, w), elements=st.booleans()))
    ts = draw(st.integers(-(2**40), 2**40))
    return RadarFrame(GridSpec(w, h), np.where(valid, labels, 0), valid, ts)


@given(frames())
def test_frame_round_trip_is_byte_identical(frame):
    data = io.encode_frame(frame)
    back = io.decode_frame(data)
    assert back.equals(frame)
    assert io.encode_frame(back) == data


def test_hand_written_frame():
    data = b"WXR1 3 2 1234\n" + bytes([0, 5, 13, 255, 1, 2])
    frame = io.decode_frame(data)
    assert frame.spec.shape == (2, 3)
    assert frame.timestamp == 1234
    assert frame.labels.tolist() == [[0, 5, 13], [0, 1, 2]]
    assert frame.valid.tolist() == [[True, True, True], [False, True, True]]


def test_file_round_trip(tmp_path):
    frame = RadarFrame.from_labels(np.arange(12).reshape(3, 4) % 14, timestamp=7)
    io.write_frame(frame, tmp_path / "f.wxr")
    assert (tmp_path / "f.wxr").read_bytes() == io.encode_frame(frame)
    assert io.read_frame(tmp_path / "f.wxr").equals(frame)


@pytest.mark.parametrize("data, error", [
    (b"WXR1 3 2 0\n" + bytes([0, 14, 0, 0, 0, 0]), io.LabelRangeError),
    (b"WXR1 3 2 0\n" + bytes([0, 200, 0, 0, 0, 0]), io.LabelRangeError),
    (b"WXR1 3 2 0\n" + bytes([0, 1, 2]), io.TruncatedPayloadError),
    (b"WXR2 3 2 0\n" + bytes(6), io.MalformedHeaderError),
    (b"WXR1 3 x 0\n" + bytes(6), io.MalformedHeaderError),
    (b"WXR1 3 2\n" + bytes(6), io.MalformedHeaderError),
    (b"WXR1 0 2 0\n", io.MalformedHeaderError),
    (b"no newline", io.MalformedHeaderError),
])
def test_frame_parse_errors_are_distinct(data, error):
    with pytest.raises(error):
        io.decode_frame(data)


def test_trailing_bytes_rejected():
    with pytest.raises(io.FormatError):
        io.decode_frame(b"WXR1 1 1 0\n" + bytes(2))


def test_mask_round_trip(tmp_path):
    bits = np.random.default_rng(0).random((5, 7)) < 0.5
    m = PixelMask(GridSpec(7, 5), bits, MaskRole.SHADOW)
    io.write_mask(m, tmp_path / "m.msk")
    raw = (tmp_path / "m.msk").read_bytes()
    assert raw.startswith(b"MSK1 7 5 shadow\n")
    back = io.read_mask(tmp_path / "m.msk")
    assert back.equals(m) and back.role == MaskRole.SHADOW
    (tmp_path / "bad.msk").write_bytes(b"MSK1 1 1 shadow\n\x02")
    with pytest.raises(io.FormatError):
        io.read_mask(tmp_path / "bad.msk")
    (tmp_path / "role.msk").write_bytes(b"MSK1 1 1 nonsense\n\x00")
    with pytest.raises(io.MalformedHeaderError):
        io.read_mask(tmp_path / "role.msk")


def test_msg_round_trip(tmp_path):
    spec = GridSpec(4, 3)
    ch = np.random.default_rng(1).normal(size=(12, 3, 4)).astype(np.float32)
    msg = MsgFrame(spec, ch, 99)
    io.write_msg(msg, tmp_path / "a.msg")
    raw = (tmp_path / "a.msg").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b"MSG1 4 3 99 12"
    assert np.array_equal(np.frombuffer(payload, "<f4").reshape(12, 3, 4), ch)
    back = io.read_msg(tmp_path / "a.msg")
    assert np.array_equal(back.channels, ch) and back.timestamp == 99
    (tmp_path / "b.msg").write_bytes(b"MSG1 4 3 99 11\n" + bytes(11 * 48))
    with pytest.raises(io.MalformedHeaderError):
        io.read_msg(tmp_path / "b.msg")


def test_sum_round_trip(tmp_path):
    s = SumImage(GridSpec(3, 2), np.arange(6, dtype=np.int64).reshape(2, 3) * 1182, 5)
    io.write_sum(s, tmp_path / "s.sum")
    back = io.read_sum(tmp_path / "s.sum")
    assert back.frame_count == 5 and np.array_equal(back.centi_dbz, s.centi_dbz)


def test_sector_round_trip(tmp_path):
    sectors = ShadowSectorSet((ShadowSector(0, 0.5, 0.8490659, 10.0, 225.0),
                               ShadowSector(2, 6.0, 2 * np.pi, 10.0, 200.0)))
    io.write_sectors(sectors, tmp_path / "s.ssv")
    lines = (tmp_path / "s.ssv").read_text().splitlines()
    assert lines[0] == "0 0.5 0.849066 10 225"
    back = io.read_sectors(tmp_path / "s.ssv")
    assert len(back) == 2
    for a, b in zip(back, sectors):
        assert a.station == b.station
        assert a.theta_end == pytest.approx(b.theta_end, rel=1e-5)
    (tmp_path / "bad.ssv").write_text("0 1 2\n")
    with pytest.raises(io.FormatError):
        io.read_sectors(tmp_path / "bad.ssv")


def test_station_round_trip(tmp_path):
    io.write_stations(DEFAULT_STATIONS, tmp_path / "st.json")
    assert io.read_stations(tmp_path / "st.json") == DEFAULT_STATIONS


def test_patch_dir(tmp_path):
    frame = RadarFrame.from_labels(np.ones((5, 5)))
    io.write_frame(frame, tmp_path / "a.wxr")
    (tmp_path / "index.txt").write_text("a.wxr artifact\n\n")
    patches = io.read_patch_dir(tmp_path)
    assert len(patches) == 1 and patches[0][1] == "artifact"
    (tmp_path / "index.txt").write_text("a.wxr clutter\n")
    with pytest.raises(io.FormatError):
        io.read_patch_dir(tmp_path)
    with pytest.raises(io.FormatError):
        io.read_patch_dir(tmp_path / "missing")
