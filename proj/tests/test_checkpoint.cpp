#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "vmnf/checkpoint.hpp"
#include "vmnf/config.hpp"
#include "vmnf/error.hpp"

using namespace vmnf;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
            return false;
    return true;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

MixtureModel small_model(unsigned long seed, const char* type = "realnvp") {
    ModelConfig m;
    m.type = type;
    m.components = 2;
    m.blocks = 2;
    m.hidden = 4;
    m.posterior_hidden = {6};
    Rng rng(seed);
    return build_model(m, 2, rng);
}

Tensor probe_batch() {
    Rng rng(321);
    Tensor x(Shape{7, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("checkpoint: container round trip preserves every byte") {
    Checkpoint ckpt;
    ckpt.config_text = "{\"model\":{}} with trailing text \n\t and \xc3\xa9";
    ckpt.epoch = 12345678901234ull;
    ckpt.rng_state = std::string("\x00\x01\xff binary", 10);
    Tensor scalar = Tensor::scalar(-0.0);
    Tensor vec = Tensor::vec({1.5, std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::quiet_NaN(), 5e-324});
    Tensor mat(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    ckpt.tensors = {{"s", scalar}, {"v", vec}, {"m", mat}};
    save_checkpoint(ckpt, "ckpt_rt.bin");

    Checkpoint back = load_checkpoint("ckpt_rt.bin");
    CHECK(back.config_text == ckpt.config_text);
    CHECK(back.epoch == ckpt.epoch);
    CHECK(back.rng_state == ckpt.rng_state);
    REQUIRE(back.tensors.size() == 3);
    CHECK(back.tensors[0].first == "s");
    CHECK(back.tensors[1].first == "v");
    CHECK(back.tensors[2].first == "m");
    CHECK(same_bits(back.tensors[0].second, scalar));
    CHECK(same_bits(back.tensors[1].second, vec));
    CHECK(same_bits(back.tensors[2].second, mat));

    save_checkpoint(back, "ckpt_rt2.bin");
    CHECK(slurp("ckpt_rt.bin") == slurp("ckpt_rt2.bin"));
}

TEST_CASE("checkpoint: snapshot and restore reproduce model outputs bitwise") {
    MixtureModel trained = small_model(1);
    // Nudge the parameters away from init so the restore has real work to do.
    Rng data_rng(8);
    Tensor pts(Shape{32, 2});
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = data_rng.normal();
    MixtureOptimizer opt(trained, 0.01, 0.0);
    Rng train_rng(5);
    train_epoch_unsupervised(trained, opt, pts, 2.0, 8, train_rng);

    Rng probe_rng(17);
    Checkpoint ckpt = snapshot_model(trained, "{\"note\":1}", 3, probe_rng);
    CHECK(ckpt.epoch == 3);
    CHECK(ckpt.config_text == "{\"note\":1}");
    save_checkpoint(ckpt, "ckpt_model.bin");

    MixtureModel fresh = small_model(999);
    restore_model(fresh, load_checkpoint("ckpt_model.bin"));
    trained.set_training(false);
    fresh.set_training(false);

    Tensor x = probe_batch();
    Tensor ev_a = trained.exact_log_evidence(constant(x));
    Tensor ev_b = fresh.exact_log_evidence(constant(x));
    CHECK(same_bits(ev_a, ev_b));
    Tensor r_a = trained.responsibilities(constant(x), 1.0)->value;
    Tensor r_b = fresh.responsibilities(constant(x), 1.0)->value;
    CHECK(same_bits(r_a, r_b));

    Rng restored_rng(0);
    restored_rng.deserialize(ckpt.rng_state);
    Rng expect_rng(17);
    for (int i = 0; i < 16; ++i) CHECK(restored_rng.normal() == expect_rng.normal());
}

TEST_CASE("checkpoint: batch norm running statistics travel along") {
    auto build = [](unsigned long seed) {
        Rng rng(seed);
        std::vector<std::unique_ptr<FlowStack>> comps;
        for (int k = 0; k < 2; ++k) {
            auto stack = std::make_unique<FlowStack>(2);
            stack->add_layer(std::make_unique<PluLayer>(2, rng));
            stack->add_layer(std::make_unique<BatchNormLayer>(2));
            comps.push_back(std::move(stack));
        }
        return MixtureModel(std::move(comps), Mlp({2, 2}, rng));
    };
    MixtureModel warmed = build(2);
    Tensor pts = probe_batch();
    MixtureOptimizer opt(warmed, 0.001, 0.0);
    Rng train_rng(6);
    train_epoch_unsupervised(warmed, opt, pts, 1.0, 7, train_rng);

    StateList state;
    warmed.collect_state(state);
    REQUIRE(!state.empty());

    Rng rng_snapshot(1);
    Checkpoint ckpt = snapshot_model(warmed, "{}", 1, rng_snapshot);
    MixtureModel fresh = build(77);
    restore_model(fresh, ckpt);
    warmed.set_training(false);
    fresh.set_training(false);
    Tensor ev_a = warmed.exact_log_evidence(constant(pts));
    Tensor ev_b = fresh.exact_log_evidence(constant(pts));
    CHECK(same_bits(ev_a, ev_b));

    StateList fresh_state;
    fresh.collect_state(fresh_state);
    REQUIRE(fresh_state.size() == state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        CHECK(fresh_state[i].first == state[i].first);
        CHECK(same_bits(*fresh_state[i].second, *state[i].second));
    }
}

TEST_CASE("checkpoint: restore rejects mismatched tensor sets") {
    MixtureModel model = small_model(1);
    Rng rng(1);
    Checkpoint ckpt = snapshot_model(model, "{}", 0, rng);

    Checkpoint missing = ckpt;
    missing.tensors.pop_back();
    MixtureModel m1 = small_model(2);
    CHECK_THROWS_AS(restore_model(m1, missing), FormatError);

    Checkpoint extra = ckpt;
    extra.tensors.emplace_back("ghost", Tensor::scalar(1.0));
    MixtureModel m2 = small_model(2);
    CHECK_THROWS_AS(restore_model(m2, extra), FormatError);

    Checkpoint bad_shape = ckpt;
    bad_shape.tensors[0].second = Tensor(Shape{1, 1});
    MixtureModel m3 = small_model(2);
    CHECK_THROWS_AS(restore_model(m3, bad_shape), FormatError);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
    Checkpoint ckpt;
    ckpt.config_text = "{}";
    ckpt.tensors = {{"t", Tensor::vec({1.0, 2.0})}};
    save_checkpoint(ckpt, "ckpt_ok.bin");
    const std::string good = slurp("ckpt_ok.bin");

    CHECK_THROWS_AS(load_checkpoint("ckpt_nowhere.bin"), IoError);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    spit("ckpt_bad_magic.bin", bad_magic);
    CHECK_THROWS_AS(load_checkpoint("ckpt_bad_magic.bin"), FormatError);

    std::string bad_version = good;
    bad_version[4] = 9;
    spit("ckpt_bad_version.bin", bad_version);
    CHECK_THROWS_AS(load_checkpoint("ckpt_bad_version.bin"), FormatError);

    spit("ckpt_truncated.bin", good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint("ckpt_truncated.bin"), FormatError);

    spit("ckpt_trailing.bin", good + "junk");
    CHECK_THROWS_AS(load_checkpoint("ckpt_trailing.bin"), FormatError);
}
