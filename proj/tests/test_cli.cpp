#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "keap/data.hpp"
#include "keap/probes.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string(KEAP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("keap_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small but fast pretraining invocation
std::string tiny_train_flags(const fs::path& triplets, const fs::path& run_root,
                             const std::string& run_name, unsigned seed = 5) {
  std::ostringstream os;
  os << "pretrain --triplets " << triplets.string() << " --run_dir " << run_root.string()
     << " --run_name " << run_name << " --hidden_dim 16 --encoder_layers 1 --pik_blocks 1"
     << " --heads 2 --ffn_dim 32 --knowledge_layers 1 --max_protein_len 40"
     << " --max_relation_len 8 --max_attribute_len 16 --steps 20 --batch_size 8"
     << " --peak_lr 0.001 --seed " << seed;
  return os.str();
}

}  // namespace

TEST_CASE("gen-synth writes a parseable triplet file") {
  TempDir dir("gen");
  const fs::path out = dir.path / "synth.tsv";
  const RunResult r =
      run_cli("gen-synth --n 100 --len 10 --seed 3 --out " + out.string(), dir.path);
  REQUIRE(r.exit_code == 0);
  CHECK(line_count(out) == 100);
  const keap::KnowledgeGraph kg =
      keap::load_triplets_file(out.string(), keap::ResiduePolicy::kReject);
  CHECK(kg.size() == 100);
}

TEST_CASE("filter-kg removes holdout proteins and reports the fraction") {
  TempDir dir("filter");
  const fs::path in = dir.path / "kg.tsv";
  const fs::path holdout = dir.path / "holdout.txt";
  const fs::path out = dir.path / "filtered.tsv";
  run_cli("gen-synth --n 50 --len 8 --seed 9 --out " + in.string(), dir.path);
  const keap::KnowledgeGraph kg =
      keap::load_triplets_file(in.string(), keap::ResiduePolicy::kReject);
  {
    std::ofstream h(holdout);
    for (std::size_t i = 0; i < 10; ++i) h << kg[i].protein << '\n';
  }
  const RunResult r = run_cli("filter-kg --in " + in.string() + " --holdout " +
                                  holdout.string() + " --out " + out.string(),
                              dir.path);
  REQUIRE(r.exit_code == 0);
  const json report = json::parse(r.output.substr(0, r.output.find('\n')));

  // recount from the output file
  const keap::KnowledgeGraph filtered =
      keap::load_triplets_file(out.string(), keap::ResiduePolicy::kReject);
  CHECK(report.at("retained_triplets").get<std::size_t>() == filtered.size());
  CHECK(report.at("removed_triplets").get<std::size_t>() == kg.size() - filtered.size());
  CHECK(report.at("retained_fraction").get<double>() ==
        Catch::Approx(static_cast<double>(filtered.size()) / static_cast<double>(kg.size())));

  SECTION("empty holdout reproduces the input byte for byte") {
    const fs::path none = dir.path / "none.txt";
    std::ofstream(none) << "";
    const fs::path out2 = dir.path / "unfiltered.tsv";
    const RunResult r2 = run_cli("filter-kg --in " + in.string() + " --holdout " + none.string() +
                                     " --out " + out2.string(),
                                 dir.path);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(out2) == slurp(in));
  }
}

TEST_CASE("pretrain produces the run artifacts") {
  TempDir dir("pretrain");
  const fs::path triplets = dir.path / "kg.tsv";
  run_cli("gen-synth --n 32 --len 8 --seed 1 --out " + triplets.string(), dir.path);

  const RunResult r = run_cli(tiny_train_flags(triplets, dir.path / "runs", "a"), dir.path);
  REQUIRE(r.exit_code == 0);
  const fs::path run_dir = dir.path / "runs" / "a";
  CHECK(fs::exists(run_dir / "config.resolved"));
  CHECK(fs::exists(run_dir / "final.keap"));
  CHECK(line_count(run_dir / "loss.csv") == 21);  // header + 20 steps

  SECTION("the same config and seed reproduce the loss CSV bitwise") {
    const RunResult r2 = run_cli(tiny_train_flags(triplets, dir.path / "runs", "b"), dir.path);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(run_dir / "loss.csv") == slurp(dir.path / "runs" / "b" / "loss.csv"));
  }
  SECTION("a different seed changes the trace") {
    const RunResult r3 =
        run_cli(tiny_train_flags(triplets, dir.path / "runs", "c", 99), dir.path);
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(run_dir / "loss.csv") != slurp(dir.path / "runs" / "c" / "loss.csv"));
  }
  SECTION("re-running from the echoed resolved config reproduces the run") {
    const RunResult r2 = run_cli("pretrain --config " + (run_dir / "config.resolved").string() +
                                     " --run_name resolved",
                                 dir.path);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(run_dir / "loss.csv") == slurp(dir.path / "runs" / "resolved" / "loss.csv"));
  }
  SECTION("a config file provides values and flags override it") {
    std::ofstream cfg(dir.path / "run.conf");
    cfg << "# tiny run\n"
        << "steps = 7\n"
        << "hidden_dim = 16\n";
    cfg.close();
    std::ostringstream os;
    os << "pretrain --config " << (dir.path / "run.conf").string() << " --triplets "
       << triplets.string() << " --run_dir " << (dir.path / "runs").string()
       << " --run_name conf --encoder_layers 1 --pik_blocks 1 --heads 2 --ffn_dim 32"
       << " --knowledge_layers 1 --max_protein_len 12 --max_relation_len 8"
       << " --max_attribute_len 16 --batch_size 8 --steps 5";
    const RunResult r4 = run_cli(os.str(), dir.path);
    REQUIRE(r4.exit_code == 0);
    CHECK(line_count(dir.path / "runs" / "conf" / "loss.csv") == 6);  // flag wins over file
    const std::string resolved = slurp(dir.path / "runs" / "conf" / "config.resolved");
    CHECK(resolved.find("steps = 5") != std::string::npos);
  }
}

TEST_CASE("pretrain exit codes") {
  TempDir dir("exits");
  SECTION("missing triplet file exits 2") {
    const RunResult r = run_cli("pretrain --triplets " + (dir.path / "nope.tsv").string() +
                                    " --run_dir " + (dir.path / "runs").string(),
                                dir.path);
    CHECK(r.exit_code == 2);
  }
  SECTION("numeric blow-up exits 3") {
    const fs::path triplets = dir.path / "kg.tsv";
    run_cli("gen-synth --n 16 --len 8 --seed 1 --out " + triplets.string(), dir.path);
    std::ostringstream os;
    os << "pretrain --triplets " << triplets.string() << " --run_dir "
       << (dir.path / "runs").string() << " --run_name blowup --hidden_dim 16"
       << " --encoder_layers 1 --pik_blocks 1 --heads 2 --ffn_dim 32 --knowledge_layers 1"
       << " --max_protein_len 12 --max_relation_len 8 --max_attribute_len 16"
       << " --steps 40 --batch_size 8 --peak_lr 1e9 --warmup_ratio 0 --clip_norm 1e12 --seed 2";
    const RunResult r = run_cli(os.str(), dir.path);
    CHECK(r.exit_code == 3);
  }
  SECTION("unknown command exits 2") {
    CHECK(run_cli("frobnicate", dir.path).exit_code == 2);
  }
}

TEST_CASE("holdout filtering inside pretrain reports removals") {
  TempDir dir("hold");
  const fs::path triplets = dir.path / "kg.tsv";
  run_cli("gen-synth --n 40 --len 8 --seed 2 --out " + triplets.string(), dir.path);
  const keap::KnowledgeGraph kg =
      keap::load_triplets_file(triplets.string(), keap::ResiduePolicy::kReject);
  const fs::path holdout = dir.path / "holdout.txt";
  {
    std::ofstream h(holdout);
    for (std::size_t i = 0; i < 8; ++i) h << kg[i].protein << '\n';
  }
  const RunResult r = run_cli(
      tiny_train_flags(triplets, dir.path / "runs", "h") + " --holdout " + holdout.string(),
      dir.path);
  REQUIRE(r.exit_code == 0);
  const json report = json::parse(r.output.substr(0, r.output.find('\n')));
  std::set<std::string> held;
  for (std::size_t i = 0; i < 8; ++i) held.insert(kg[i].protein);
  std::size_t expected_removed = 0;
  for (const auto& t : kg.triplets())
    if (held.contains(t.protein)) ++expected_removed;
  CHECK(report.at("removed_triplets").get<std::size_t>() == expected_removed);
  CHECK(fs::exists(dir.path / "runs" / "h" / "removal_report.json"));
}

TEST_CASE("gradcheck command") {
  TempDir dir("gc");
  SECTION("default tiny config passes and reports >= 100 samples") {
    const RunResult r = run_cli("gradcheck", dir.path);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("gradient check passed") != std::string::npos);
    std::size_t listed = 0;
    std::istringstream is(r.output);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("ok  ", 0) == 0 || line.rfind("FAIL", 0) == 0) ++listed;
    CHECK(listed >= 100);
  }
  SECTION("the corruption hook exits 1 naming the tensor") {
    const RunResult r = run_cli("gradcheck --corrupt_grad decoder.mlm.w", dir.path);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("decoder.mlm.w") != std::string::npos);
  }
  SECTION("the parameter cap is enforced") {
    const RunResult r = run_cli("gradcheck --hidden_dim 64 --gc_param_cap 1000", dir.path);
    CHECK(r.exit_code == 2);
  }
}

TEST_CASE("ablate emits the requested grid") {
  TempDir dir("ablate");
  std::ostringstream os;
  os << "ablate --synth_n 24 --synth_len 8 --run_dir " << (dir.path / "runs").string()
     << " --run_name g --variants cascaded,no_pik --ratios 0.15,0.25 --hidden_dim 16"
     << " --encoder_layers 1 --pik_blocks 1 --heads 2 --ffn_dim 32 --knowledge_layers 1"
     << " --max_protein_len 12 --max_relation_len 8 --max_attribute_len 16"
     << " --steps 10 --batch_size 8 --seed 4";
  const RunResult r = run_cli(os.str(), dir.path);
  REQUIRE(r.exit_code == 0);
  const fs::path csv = dir.path / "runs" / "g" / "ablation.csv";
  REQUIRE(fs::exists(csv));
  CHECK(line_count(csv) == 5);  // header + 2 variants x 2 ratios
  const std::string content = slurp(csv);
  CHECK(content.find("cascaded,0.15") != std::string::npos);
  CHECK(content.find("no_pik,0.25") != std::string::npos);

  SECTION("cascaded+match rows report match accuracy") {
    std::ostringstream os2;
    os2 << "ablate --synth_n 24 --synth_len 8 --run_dir " << (dir.path / "runs").string()
        << " --run_name m --variants cascaded+match --ratios 0.2 --hidden_dim 16"
        << " --encoder_layers 1 --pik_blocks 1 --heads 2 --ffn_dim 32 --knowledge_layers 1"
        << " --max_protein_len 12 --max_relation_len 8 --max_attribute_len 16"
        << " --steps 10 --batch_size 8 --seed 4";
    REQUIRE(run_cli(os2.str(), dir.path).exit_code == 0);
    std::ifstream in(dir.path / "runs" / "m" / "ablation.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(row.rfind("cascaded+match,0.2,", 0) == 0);
    CHECK(row.back() != ',');  // match accuracy column populated
  }
}

TEST_CASE("eval command per task") {
  TempDir dir("eval");
  const fs::path triplets = dir.path / "kg.tsv";
  run_cli("gen-synth --n 32 --len 8 --seed 1 --out " + triplets.string(), dir.path);
  REQUIRE(run_cli(tiny_train_flags(triplets, dir.path / "runs", "train"), dir.path).exit_code ==
          0);
  const fs::path ckpt = dir.path / "runs" / "train" / "final.keap";

  SECTION("contact task emits the 3x3 report grid") {
    const fs::path data = dir.path / "contacts.jsonl";
    keap::write_contact_jsonl(keap::generate_toy_contacts(10, 30, 3), data.string());
    std::ostringstream os;
    os << "eval --checkpoint " << ckpt.string() << " --task contact --data " << data.string()
       << " --run_dir " << (dir.path / "runs").string() << " --run_name ec"
       << " --probe_epochs 2 --seed 3";
    const RunResult r = run_cli(os.str(), dir.path);
    REQUIRE(r.exit_code == 0);
    const fs::path reports = dir.path / "runs" / "ec" / "reports_contact.jsonl";
    REQUIRE(fs::exists(reports));
    REQUIRE(line_count(reports) == 9);
    std::set<std::pair<std::string, std::string>> grid;
    std::ifstream in(reports);
    std::string line;
    while (std::getline(in, line)) {
      const json j = json::parse(line);
      CHECK(j.at("metric") == "contact_precision");
      grid.emplace(j.at("params").at("bucket"), j.at("params").at("divisor"));
    }
    CHECK(grid.size() == 9);

    SECTION("rerunning yields identical reports") {
      std::ostringstream os2;
      os2 << "eval --checkpoint " << ckpt.string() << " --task contact --data " << data.string()
          << " --run_dir " << (dir.path / "runs").string() << " --run_name ec2"
          << " --probe_epochs 2 --seed 3";
      REQUIRE(run_cli(os2.str(), dir.path).exit_code == 0);
      CHECK(slurp(reports) == slurp(dir.path / "runs" / "ec2" / "reports_contact.jsonl"));
    }
  }
  SECTION("similarity task reports one Spearman per group") {
    const fs::path data = dir.path / "sim.tsv";
    {
      std::ofstream out(data);
      out << "ACDEFG\tWYKLMN\t0.7\tMF\n"
          << "ACDEFG\tACDEFH\t0.9\tMF\n"
          << "WYKLMN\tACDEFH\t0.4\tMF\n"
          << "ACDEFG\tWYKLMN\t0.6\tBP\n"
          << "WYKLMN\tWYKLMM\t0.8\tBP\n"
          << "ACDEFH\tWYKLMM\t0.2\tBP\n";
    }
    std::ostringstream os;
    os << "eval --checkpoint " << ckpt.string() << " --task similarity --data " << data.string()
       << " --run_dir " << (dir.path / "runs").string() << " --run_name es";
    const RunResult r = run_cli(os.str(), dir.path);
    REQUIRE(r.exit_code == 0);
    CHECK(line_count(dir.path / "runs" / "es" / "reports_similarity.jsonl") == 2);
  }
  SECTION("affinity task runs the k-fold protocol") {
    const fs::path data = dir.path / "aff.tsv";
    {
      std::ofstream out(data);
      keap::Rng rng(4);
      constexpr std::string_view canonical = "ACDEFGHIKLMNPQRSTVWY";
      for (int i = 0; i < 12; ++i) {
        std::string a(6, 'A'), b(6, 'A');
        for (auto& c : a) c = canonical[rng.uniform_int(20)];
        for (auto& c : b) c = canonical[rng.uniform_int(20)];
        out << a << '\t' << b << '\t' << rng.uniform() << '\n';
      }
    }
    std::ostringstream os;
    os << "eval --checkpoint " << ckpt.string() << " --task affinity --data " << data.string()
       << " --run_dir " << (dir.path / "runs").string() << " --run_name ea --folds 4";
    const RunResult r = run_cli(os.str(), dir.path);
    REQUIRE(r.exit_code == 0);
    CHECK(line_count(dir.path / "runs" / "ea" / "reports_affinity.jsonl") == 5);  // mean + folds
  }
  SECTION("ppi task reports micro and macro F1") {
    const fs::path data = dir.path / "ppi.jsonl";
    {
      std::vector<keap::PpiExample> examples;
      keap::Rng rng(5);
      constexpr std::string_view canonical = "ACDEFGHIKLMNPQRSTVWY";
      for (int i = 0; i < 12; ++i) {
        keap::PpiExample ex;
        ex.sequence_a.assign(6, 'A');
        ex.sequence_b.assign(6, 'A');
        for (auto& c : ex.sequence_a) c = canonical[rng.uniform_int(20)];
        for (auto& c : ex.sequence_b) c = canonical[rng.uniform_int(20)];
        for (int k = 0; k < 7; ++k) ex.labels.push_back(rng.uniform() < 0.4);
        examples.push_back(std::move(ex));
      }
      keap::write_ppi_jsonl(examples, data.string());
    }
    std::ostringstream os;
    os << "eval --checkpoint " << ckpt.string() << " --task ppi --data " << data.string()
       << " --run_dir " << (dir.path / "runs").string() << " --run_name ep --probe_epochs 3";
    const RunResult r = run_cli(os.str(), dir.path);
    REQUIRE(r.exit_code == 0);
    CHECK(line_count(dir.path / "runs" / "ep" / "reports_ppi.jsonl") == 2);
  }
  SECTION("conflicting architecture flags are a version error") {
    const fs::path data = dir.path / "contacts2.jsonl";
    keap::write_contact_jsonl(keap::generate_toy_contacts(4, 20, 3), data.string());
    std::ostringstream os;
    os << "eval --checkpoint " << ckpt.string() << " --task contact --data " << data.string()
       << " --run_dir " << (dir.path / "runs").string() << " --run_name bad --hidden_dim 64";
    CHECK(run_cli(os.str(), dir.path).exit_code == 2);
  }
}

TEST_CASE("KEAP_RUN_DIR environment variable sets the run root") {
  TempDir dir("env");
  const fs::path triplets = dir.path / "kg.tsv";
  run_cli("gen-synth --n 16 --len 6 --seed 1 --out " + triplets.string(), dir.path);
  const fs::path env_root = dir.path / "env_runs";
  std::ostringstream os;
  os << "KEAP_RUN_DIR=" << env_root.string() << " " << KEAP_CLI_PATH
     << " pretrain --triplets " << triplets.string()
     << " --run_name envrun --hidden_dim 16 --encoder_layers 1 --pik_blocks 1 --heads 2"
     << " --ffn_dim 32 --knowledge_layers 1 --max_protein_len 12 --max_relation_len 8"
     << " --max_attribute_len 16 --steps 5 --batch_size 8 > " << (dir.path / "o.txt").string()
     << " 2>&1";
  const int status = std::system(os.str().c_str());
  REQUIRE(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(env_root / "envrun" / "loss.csv"));
}
