#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "keap/checkpoint.hpp"
#include "keap/train.hpp"

using namespace keap;
using Catch::Approx;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.encoder_layers = 1;
  cfg.pik_blocks = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.knowledge_layers = 1;
  cfg.max_protein_len = 12;
  cfg.max_relation_len = 8;
  cfg.max_attribute_len = 16;
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("keap_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("lr_at schedule boundaries") {
  CHECK(lr_at(0, 100, 0.1, 2.0) == 0.0);
  CHECK(lr_at(10, 100, 0.1, 2.0) == 2.0);
  CHECK(lr_at(100, 100, 0.1, 2.0) == 0.0);
  SECTION("midpoint of the decay is half the peak") {
    // warmup 10, decay spans [10,100]; midpoint 55
    CHECK(lr_at(55, 100, 0.1, 2.0) == Approx(1.0).margin(1e-9));
  }
  SECTION("no warmup starts at the peak") {
    CHECK(lr_at(0, 50, 0.0, 3.0) == 3.0);
  }
  SECTION("linear within each phase") {
    CHECK(lr_at(5, 100, 0.1, 2.0) == Approx(1.0));
    CHECK(lr_at(10 + 45, 100, 0.1, 2.0) == Approx(1.0));
  }
}

TEST_CASE("adamw_step") {
  ModelConfig cfg = tiny_config();
  SECTION("zero gradients and zero decay leave parameters unchanged") {
    TrainState<float> state = TrainState<float>::init(cfg, 1);
    const auto before = state.params.at("decoder.mlm.w").data();
    for (const auto& name : state.params.learnable_names()) state.params.at(name).grad();
    adamw_step(state, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
    CHECK(state.params.at("decoder.mlm.w").data() == before);
  }
  SECTION("decoupled decay scales by (1 - lr*d) under zero gradients") {
    TrainState<float> state = TrainState<float>::init(cfg, 1);
    const auto before = state.params.at("decoder.mlm.w").data();
    for (const auto& name : state.params.learnable_names()) state.params.at(name).grad();
    adamw_step(state, 1, 0.5, 0.9, 0.999, 1e-8, 0.1);
    const auto& after = state.params.at("decoder.mlm.w").data();
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(after[i] == Approx(before[i] * (1.0 - 0.5 * 0.1)).margin(1e-7));
  }
  SECTION("single scalar step matches the closed form") {
    // one parameter, one step: m=0.1g, v=0.001g^2, with bias correction the
    // update is exactly -lr * g/(|g| + eps') ... computed explicitly below.
    const double g = 0.37, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.0;
    const double m = (1 - b1) * g;
    const double v = (1 - b2) * g * g;
    const double m_hat = m / (1 - b1);
    const double v_hat = v / (1 - b2);
    const double expect_delta = -lr * m_hat / (std::sqrt(v_hat) + eps);

    TrainState<float> state = TrainState<float>::init(cfg, 1);
    const std::string name = "decoder.mlm.b";
    for (const auto& n : state.params.learnable_names()) state.params.at(n).grad();
    const float before = state.params.at(name).data()[0];
    state.params.at(name).grad()[0] = static_cast<float>(g);
    adamw_step(state, 1, lr, b1, b2, eps, wd);
    CHECK(state.params.at(name).data()[0] ==
          Approx(before + expect_delta).margin(1e-7));
  }
  SECTION("frozen tensors have no moment slots and never move") {
    TrainState<float> state = TrainState<float>::init(cfg, 1);
    CHECK_FALSE(state.moments.contains("knowledge.tok_emb"));
    const auto before = state.params.at("knowledge.tok_emb").data();
    for (const auto& name : state.params.learnable_names()) {
      for (auto& gv : state.params.at(name).grad()) gv = 1.0f;
    }
    adamw_step(state, 1, 0.1, 0.9, 0.999, 1e-8, 0.01);
    CHECK(state.params.at("knowledge.tok_emb").data() == before);
  }
}

TEST_CASE("gradient clipping bounds the global norm") {
  ModelConfig cfg = tiny_config();
  TrainState<float> state = TrainState<float>::init(cfg, 3);
  for (const auto& name : state.params.learnable_names())
    for (auto& g : state.params.at(name).grad()) g = 0.05f;
  const double before = clip_gradients(state.params, 1.0);
  CHECK(before > 1.0);
  double sq = 0.0;
  for (const auto& name : state.params.learnable_names())
    for (const float g : state.params.at(name).grad()) sq += static_cast<double>(g) * g;
  CHECK(std::sqrt(sq) <= 1.0 + 1e-6);
}

TEST_CASE("training is deterministic and learns on the synthetic task") {
  ModelConfig cfg = tiny_config();
  KnowledgeGraph kg = generate_synthetic_kg(64, 8, SynthMode::kKnowledgeDependent, 5);
  TextVocabulary vocab = build_text_vocab(kg);
  TokenizerConfig tok{cfg.max_protein_len, cfg.max_relation_len, cfg.max_attribute_len};
  cfg.text_vocab = vocab.size();

  TrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 8;
  tc.peak_lr = 2e-3;
  tc.seed = 11;

  TrainResult<float> a = train<float>(cfg, tc, kg, vocab, tok);
  REQUIRE(a.trace.size() == 60);

  SECTION("two runs with the same seed produce bitwise-identical traces") {
    TrainResult<float> b = train<float>(cfg, tc, kg, vocab, tok);
    REQUIRE(b.trace.size() == a.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].loss == b.trace[i].loss);
      CHECK(a.trace[i].lr == b.trace[i].lr);
    }
  }
  SECTION("the lr trace matches lr_at pointwise") {
    for (const auto& row : a.trace)
      CHECK(row.lr == lr_at(row.step, tc.steps, tc.warmup_ratio, tc.peak_lr));
  }
  SECTION("loss decreases over the run") {
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      first += a.trace[i].loss;
      last += a.trace[a.trace.size() - 1 - i].loss;
    }
    CHECK(last < first);
  }
  SECTION("frozen knowledge weights are bitwise unchanged by training") {
    Parameters<float> fresh = init_parameters<float>(cfg, tc.seed);
    for (const auto& [name, tensor] : a.state.params.named)
      if (name.rfind("knowledge.", 0) == 0) CHECK(tensor.data() == fresh.at(name).data());
  }
}

TEST_CASE("non-finite loss aborts with a numeric error naming the step") {
  ModelConfig cfg = tiny_config();
  KnowledgeGraph kg = generate_synthetic_kg(8, 6, SynthMode::kKnowledgeDependent, 5);
  TextVocabulary vocab = build_text_vocab(kg);
  TokenizerConfig tok{cfg.max_protein_len, cfg.max_relation_len, cfg.max_attribute_len};
  cfg.text_vocab = vocab.size();
  TrainConfig tc;
  tc.steps = 30;
  tc.batch_size = 8;
  tc.peak_lr = 1e6;  // blows up quickly
  tc.warmup_ratio = 0.0;
  tc.clip_norm = 1e9;
  tc.seed = 2;
  CHECK_THROWS_AS(train<float>(cfg, tc, kg, vocab, tok), NumericError);
}

TEST_CASE("checkpoint round-trip and resume") {
  TempDir dir("ckpt");
  ModelConfig cfg = tiny_config();
  KnowledgeGraph kg = generate_synthetic_kg(32, 8, SynthMode::kKnowledgeDependent, 7);
  TextVocabulary vocab = build_text_vocab(kg);
  TokenizerConfig tok{cfg.max_protein_len, cfg.max_relation_len, cfg.max_attribute_len};
  cfg.text_vocab = vocab.size();

  TrainConfig tc;
  tc.steps = 24;
  tc.batch_size = 8;
  tc.peak_lr = 1e-3;
  tc.seed = 13;

  const std::string mid_path = (dir.path / "mid.keap").string();
  const std::string final_path = (dir.path / "final.keap").string();
  tc.checkpoint_interval = 12;
  TrainResult<float> full = train<float>(
      cfg, tc, kg, vocab, tok, [&](const TrainState<float>& state) {
        if (state.step == 12) save_checkpoint(state, mid_path);
      });
  save_checkpoint(full.state, final_path);

  SECTION("save -> load -> forward is bitwise identical") {
    TrainState<float> loaded = load_checkpoint(final_path);
    CHECK(loaded.step == full.state.step);
    for (const auto& [name, tensor] : full.state.params.named)
      CHECK(loaded.params.at(name).data() == tensor.data());
    for (const auto& [name, slots] : full.state.moments) {
      CHECK(loaded.moments.at(name).m == slots.m);
      CHECK(loaded.moments.at(name).v == slots.v);
    }
    TokenBatch batch = make_token_batch(kg, {0, 1, 2}, vocab, tok);
    MaskedBatch mb = apply_masking(batch, cfg.mask_ratio, 99);
    auto before = pretrain_losses(full.state.params, cfg, mb);
    auto after = pretrain_losses(loaded.params, loaded.model_config, mb);
    CHECK(before.total.item() == after.total.item());
  }
  SECTION("resume at step k matches the uninterrupted run bitwise") {
    TrainState<float> resumed_state = load_checkpoint(mid_path);
    TrainResult<float> resumed = train<float>(cfg, tc, kg, vocab, tok, {}, &resumed_state);
    REQUIRE(resumed.trace.size() == 12);
    for (std::size_t i = 0; i < 12; ++i)
      CHECK(resumed.trace[i].loss == full.trace[12 + i].loss);
    for (const auto& [name, tensor] : full.state.params.named)
      CHECK(resumed.state.params.at(name).data() == tensor.data());
  }
  SECTION("manifest entries tile the blob with no gaps or overlaps") {
    std::ifstream in(final_path, std::ios::binary);
    std::string manifest_line;
    std::getline(in, manifest_line);
    const auto manifest = nlohmann::json::parse(manifest_line);
    const std::string blob((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    std::size_t covered = 0;
    for (const auto& e : manifest.at("entries")) {
      CHECK(e.at("offset").get<std::size_t>() == covered);
      covered += e.at("length").get<std::size_t>();
    }
    CHECK(covered == blob.size());
  }
  SECTION("a truncated blob is a corruption error") {
    std::ifstream in(final_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() - 10);
    const std::string broken = (dir.path / "broken.keap").string();
    std::ofstream(broken, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(broken), CorruptionError);
  }
  SECTION("an unknown format version is a version error") {
    std::ifstream in(final_path, std::ios::binary);
    std::string manifest_line;
    std::getline(in, manifest_line);
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto manifest = nlohmann::json::parse(manifest_line);
    manifest["format_version"] = 99;
    const std::string versioned = (dir.path / "versioned.keap").string();
    std::ofstream out(versioned, std::ios::binary);
    out << manifest.dump() << '\n';
    out.write(rest.data(), static_cast<std::streamsize>(rest.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(versioned), VersionError);
  }
}

TEST_CASE("training with the triplet-match objective emits both losses") {
  ModelConfig cfg = tiny_config();
  cfg.triplet_match = true;
  KnowledgeGraph kg = generate_synthetic_kg(32, 8, SynthMode::kKnowledgeDependent, 9);
  TextVocabulary vocab = build_text_vocab(kg);
  TokenizerConfig tok{cfg.max_protein_len, cfg.max_relation_len, cfg.max_attribute_len};
  cfg.text_vocab = vocab.size();
  TrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 8;
  tc.seed = 17;
  TrainResult<float> result = train<float>(cfg, tc, kg, vocab, tok);
  for (const auto& row : result.trace) {
    REQUIRE(row.match_loss.has_value());
    CHECK(row.loss >= *row.match_loss * cfg.match_lambda - 1e-6);
  }
}
