"""End-to-end smoke tests for the python bindings."""

import pytest

semlink = pytest.importorskip("semlink")


@pytest.fixture(scope="module")
def model():
    m = semlink.init_weights(
        [1024, 10, 6],
        [semlink.Activation.RELU, semlink.Activation.SOFTMAX],
        7,
        0.1,
    )
    data = semlink.synth_generate(6, 20, 0.05, 7)
    semlink.train(m, data, 40, 64)
    return m, data


def test_training_converges(model):
    m, data = model
    assert semlink.evaluate_accuracy(m, data) >= 0.95


def test_split_matches_full_model(model):
    m, data = model
    enc, dec = semlink.split_model(m, 1)
    dec.class_map = semlink.default_class_map(6, 100)
    sample = data.samples[0]
    fv = semlink.encode_features(enc, sample.pixels)
    cls, conf, rb = semlink.classify_features(dec, fv)
    full_cls, full_conf = semlink.predict(m, sample.pixels)
    assert cls == full_cls
    assert conf == pytest.approx(full_conf)


def test_sff_round_trip(model):
    m, data = model
    enc, _ = semlink.split_model(m, 1)
    fv = semlink.encode_features(enc, data.samples[0].pixels, 42)
    blob = semlink.write_sff(fv, deflate=True)
    back = semlink.read_sff(blob)
    assert back.frame_id == 42
    assert list(back.values) == list(fv.values)


def test_sff_rejects_garbage():
    with pytest.raises(ValueError):
        semlink.read_sff(b"\xde\xad\xbe\xef")


def test_episode_rollout():
    cfg = semlink.HighwayConfig()
    ep = semlink.Episode(cfg, semlink.Roadblock(lane=0, position=60), seed=3)
    assert ep.state.d2 == 60
    state, reward, done, outcome = ep.step(semlink.Action.LANE_CHANGE)
    assert done
    assert outcome == "merged_at_speed"
    assert reward == pytest.approx(10.0)


def test_oracle_and_agent():
    cfg = semlink.HighwayConfig()
    rbs = [semlink.Roadblock(lane=0, position=50)]
    acfg = semlink.AgentConfig()
    acfg.episodes = 50
    agent = semlink.train_agent(acfg, cfg, rbs, seed=11)
    report = semlink.evaluate_agent(agent, cfg, rbs, episodes=10, seed=11)
    assert report.episodes == 10
    assert report.decisions > 0


def test_server_bench_loop(model):
    m, data = model
    enc, dec = semlink.split_model(m, 1)
    dec.class_map = semlink.default_class_map(6, 100)
    server = semlink.DecoderServer(dec, m)
    try:
        report = semlink.run_bench(
            "127.0.0.1",
            server.port,
            data,
            semlink.Scenario.SINGLE,
            semlink.Mode.SEMANTIC,
            encoder=enc,
        )
    finally:
        server.stop()
    assert not report.partial
    assert report.total_bytes == 64
    assert len(report.results) == 1
    expected, _ = semlink.predict(m, data.samples[0].pixels)
    assert report.results[0].class_index == expected
