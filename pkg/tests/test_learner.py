import numpy as np
import pytest

from hdcap.errors import DataError
from hdcap.learner import LearnConfig, LearnRecord, learn_record, learn_stream
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, positional_codes
from hdcap.protomem import PrototypeMemory, SeedBundle

from _reference import reference_learn


def fresh_mem(tmp_path, world, name="m.hdfp", beta=4096, l_max=10, seed=1234):
    seeds = SeedBundle.derive(seed)
    mem = PrototypeMemory.create(str(tmp_path / name), l_max, world.vocab_size, beta, seeds)
    cfg = world.config
    proj_img = LshProjector(seeds.lsh_image, cfg.d_i, beta, ROLE_IMAGE)
    proj_cap = LshProjector(seeds.lsh_caption, cfg.d_c, beta, ROLE_CAPTION)
    codes = positional_codes(seeds.positional, cfg.n_p, beta)
    return mem, proj_img, proj_cap, codes


class TestLearnRecord:
    def test_minimal_record_single_accumulate(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world)
        record = toy_world.record("train", 0, 0)
        # Keep prefix + one target: truncates to 4 tokens with 3-token prefix.
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids, truncation=4)
        count = learn_record(mem, record, pi, pc, codes, cfg)
        assert count == 1
        touched = np.abs(mem._data).sum(axis=2)
        assert (touched > 0).sum() == 1
        mem.close()

    def test_learning_twice_doubles_cells(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world)
        record = toy_world.record("train", 0, 0)
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        learn_record(mem, record, pi, pc, codes, cfg)
        once = np.array(mem._data)
        learn_record(mem, record, pi, pc, codes, cfg)
        assert np.array_equal(np.array(mem._data), 2 * once)
        mem.close()

    def test_out_of_vocab_token_names_offender(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world)
        record = toy_world.record("train", 0, 0)
        bad = LearnRecord(record.patches,
                          record.token_ids[:-1] + (999,),
                          type(record.hidden)(record.hidden.data,
                                              record.token_ids[:-1] + (999,)))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        with pytest.raises(DataError, match="999"):
            learn_record(mem, bad, pi, pc, codes, cfg)
        mem.close()

    def test_caption_longer_than_lmax_rejected_without_truncation(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world, l_max=10)
        record = toy_world.record("train", 0, 0)  # 8 tokens with eos
        cfg = LearnConfig(l_max=5, prefix_ids=toy_world.prefix_ids, truncation=5)
        count = learn_record(mem, record, pi, pc, codes, cfg)
        assert count == 2  # positions 4, 5 after the 3-token prefix
        mem.close()

    def test_wrong_prefix_rejected(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world)
        record = toy_world.record("train", 0, 0)
        cfg = LearnConfig(l_max=10, prefix_ids=(0, 0, 0))
        with pytest.raises(DataError, match="prefix"):
            learn_record(mem, record, pi, pc, codes, cfg)
        mem.close()


class TestDenseReferenceEquivalence:
    def test_stream_matches_naive_dense_learner(self, toy_setup):
        setup = toy_setup
        dense = reference_learn(setup["records"], setup["proj_img"], setup["proj_cap"],
                                setup["codes"], setup["mem"].l_max,
                                setup["world"].vocab_size,
                                prefix_len=len(setup["world"].prefix_ids))
        assert np.array_equal(np.array(setup["mem"]._data), dense)


class TestLearnStream:
    def test_empty_source(self, tmp_path, toy_world):
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world)
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        summary = learn_stream(mem, [], pi, pc, codes, cfg)
        assert summary.records == 0
        assert not np.array(mem._data).any()
        mem.close()

    def test_linearity_partition_sum(self, tmp_path, toy_world):
        records = list(toy_world.training_records(6))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        mem_all, pi, pc, codes = fresh_mem(tmp_path, toy_world, "all.hdfp")
        learn_stream(mem_all, records, pi, pc, codes, cfg)
        mem_a, *_ = fresh_mem(tmp_path, toy_world, "a.hdfp")
        learn_stream(mem_a, records[:5], pi, pc, codes, cfg)
        mem_b, *_ = fresh_mem(tmp_path, toy_world, "b.hdfp")
        learn_stream(mem_b, records[5:], pi, pc, codes, cfg)
        assert np.array_equal(np.array(mem_all._data),
                              np.array(mem_a._data) + np.array(mem_b._data))
        for m in (mem_all, mem_a, mem_b):
            m.close()

    def test_order_independence(self, tmp_path, toy_world):
        records = list(toy_world.training_records(5))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        mem_fwd, pi, pc, codes = fresh_mem(tmp_path, toy_world, "fwd.hdfp")
        learn_stream(mem_fwd, records, pi, pc, codes, cfg)
        mem_rev, *_ = fresh_mem(tmp_path, toy_world, "rev.hdfp")
        learn_stream(mem_rev, list(reversed(records)), pi, pc, codes, cfg)
        assert np.array_equal(np.array(mem_fwd._data), np.array(mem_rev._data))
        mem_fwd.close()
        mem_rev.close()

    def test_resume_is_bit_identical(self, tmp_path, toy_world):
        records = list(toy_world.training_records(10))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids, flush_batch=4)

        mem_ref, pi, pc, codes = fresh_mem(tmp_path, toy_world, "ref.hdfp")
        learn_stream(mem_ref, records, pi, pc, codes, cfg)
        ref_path = mem_ref.path
        mem_ref.close()

        mem_int, *_ = fresh_mem(tmp_path, toy_world, "int.hdfp")
        int_path = mem_int.path

        class StopLearning(Exception):
            pass

        def boom(consumed):
            if consumed == 8:
                raise StopLearning

        with pytest.raises(StopLearning):
            learn_stream(mem_int, records, pi, pc, codes, cfg, after_checkpoint=boom)
        mem_int.close()

        resumed = PrototypeMemory.open_memory(int_path)
        assert resumed.records_consumed == 8
        learn_stream(resumed, records, pi, pc, codes, cfg)
        resumed.close()

        with open(ref_path, "rb") as fa, open(int_path, "rb") as fb:
            assert fa.read() == fb.read()

    def test_skip_with_log_vs_strict(self, tmp_path, toy_world, caplog):
        good = toy_world.record("train", 0, 0)
        bad = LearnRecord(good.patches, (5,) + good.token_ids[1:],
                          type(good.hidden)(good.hidden.data, (5,) + good.token_ids[1:]))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world, "skip.hdfp")
        with caplog.at_level("WARNING"):
            summary = learn_stream(mem, [good, bad, good], pi, pc, codes, cfg)
        assert summary.records == 2
        assert summary.skipped == 1
        assert mem.records_consumed == 3  # skipped records advance the stream
        assert any("skipping record 1" in r.message for r in caplog.records)
        mem.close()

        strict_cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids, strict=True)
        mem2, *_ = fresh_mem(tmp_path, toy_world, "strict.hdfp")
        with pytest.raises(DataError, match="record 1"):
            learn_stream(mem2, [good, bad, good], pi, pc, codes, strict_cfg)
        mem2.close()

    def test_multiple_captions_per_image_are_separate_records(self, tmp_path, toy_world):
        # One image paired with five captions enters the stream as five
        # records, each absorbed on its own.
        base = toy_world.record("train", 0, 0)
        other_caption = toy_world.record("train", 1, 0)
        records = [base] * 3 + [
            type(base)(base.patches, other_caption.token_ids, other_caption.hidden)
        ] * 2
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        mem, pi, pc, codes = fresh_mem(tmp_path, toy_world, "multi.hdfp")
        summary = learn_stream(mem, records, pi, pc, codes, cfg)
        assert summary.records == 5
        assert mem.records_consumed == 5
        mem.close()

    def test_rerun_same_stream_is_deterministic(self, tmp_path, toy_world):
        records = list(toy_world.training_records(4))
        cfg = LearnConfig(l_max=10, prefix_ids=toy_world.prefix_ids)
        mem1, pi, pc, codes = fresh_mem(tmp_path, toy_world, "d1.hdfp")
        learn_stream(mem1, records, pi, pc, codes, cfg)
        mem2, *_ = fresh_mem(tmp_path, toy_world, "d2.hdfp")
        learn_stream(mem2, records, pi, pc, codes, cfg)
        p1, p2 = mem1.path, mem2.path
        mem1.close()
        mem2.close()
        with open(p1, "rb") as fa, open(p2, "rb") as fb:
            assert fa.read() == fb.read()


class TestConfigValidation:
    def test_truncation_beyond_lmax(self):
        with pytest.raises(ValueError, match="truncation"):
            LearnConfig(l_max=5, prefix_ids=(1,), truncation=6)

    def test_prefix_must_leave_room(self):
        with pytest.raises(ValueError, match="room"):
            LearnConfig(l_max=3, prefix_ids=(1, 2, 3))
