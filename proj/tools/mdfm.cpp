// mdfm: command-line driver for synthesis, training, evaluation and the
// interpretation/perturbation analyses. Every command writes its outputs and
// a manifest.json into --out.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <streambuf>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdfm/common/hash.hpp"
#include "mdfm/interpret/interpret.hpp"
#include "mdfm/metrics/metrics.hpp"
#include "mdfm/model/checkpoint.hpp"
#include "mdfm/perturb/perturb.hpp"
#include "mdfm/seqdata/dataset.hpp"
#include "mdfm/seqdata/synth.hpp"
#include "mdfm/trainer/trainer.hpp"

#ifndef MDFM_VERSION
#define MDFM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdfm;

namespace {

// Operational failure: exit code 1.
struct OpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Manifest {
public:
    Manifest(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
        start_ = std::chrono::steady_clock::now();
        fs::create_directories(out_);
    }

    void input(const fs::path& p) { inputs_[p.string()] = file_hash(p); }
    fs::path output(const std::string& name) {
        outputs_.push_back(name);
        return out_ / name;
    }
    json& config() { return config_; }
    void seed(std::uint64_t s) { seed_ = s; }

    void write(const std::vector<std::string>& argv) const {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json j = {{"command", command_},
                  {"argv", argv},
                  {"config", config_},
                  {"seed", seed_ ? json(*seed_) : json(nullptr)},
                  {"inputs", inputs_},
                  {"outputs", outputs_},
                  {"wall_time_s", wall},
                  {"version", MDFM_VERSION}};
        std::ofstream f(out_ / "manifest.json", std::ios::trunc);
        f << j.dump(2) << '\n';
        if (!f) throw OpError("cannot write " + (out_ / "manifest.json").string());
    }

private:
    std::string command_;
    fs::path out_;
    std::chrono::steady_clock::time_point start_;
    json inputs_ = json::object();
    std::vector<std::string> outputs_;
    json config_ = json::object();
    std::optional<std::uint64_t> seed_;
};

// Writes to two streams at once; used to echo the epoch log to stderr.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == EOF) return !EOF;
        const int r1 = a_->sputc(static_cast<char>(c));
        const int r2 = b_->sputc(static_cast<char>(c));
        return r1 == EOF || r2 == EOF ? EOF : c;
    }
    int sync() override { return a_->pubsync() == 0 && b_->pubsync() == 0 ? 0 : -1; }

private:
    std::streambuf *a_, *b_;
};

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw OpError("cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw OpError("invalid JSON in " + p.string() + ": " + e.what());
    }
}

// A dataset argument is either a sample file or a directory holding
// train/test files as written by `synth`.
fs::path resolve_split(const fs::path& data, const std::string& split) {
    if (!fs::exists(data)) throw OpError("data path not found: " + data.string());
    if (!fs::is_directory(data)) return data;
    for (const char* ext : {".tsv", ".fasta", ".fa"}) {
        fs::path p = data / (split + ext);
        if (fs::exists(p)) return p;
    }
    throw OpError("no " + split + " split (.tsv/.fasta/.fa) in " + data.string());
}

std::vector<seqdata::DnaSample> load_split(const fs::path& data, const std::string& split, Manifest& m) {
    const fs::path p = resolve_split(data, split);
    m.input(p);
    seqdata::LoadedSamples s = seqdata::parse_samples(p, seqdata::format_from_path(p));
    if (!s.report.rejected.empty()) {
        std::cerr << p.string() << ": rejected " << s.report.rejected.size() << " samples (first: line "
                  << s.report.rejected.front().line << ", " << s.report.rejected.front().reason << ")\n";
    }
    return std::move(s.samples);
}

model::Checkpoint load_ckpt(const fs::path& p, Manifest& m) {
    if (!fs::exists(p)) throw OpError("checkpoint not found: " + p.string());
    m.input(p);
    return model::load_checkpoint(p);
}

void check_lengths(const std::vector<seqdata::DnaSample>& samples, const model::ModelConfig& cfg) {
    for (const auto& s : samples) {
        if (s.sequence.size() != cfg.seq_len) {
            throw OpError("sequence '" + s.id + "' has length " + std::to_string(s.sequence.size()) +
                          " but the model expects " + std::to_string(cfg.seq_len));
        }
    }
}

// Guard used by every command that takes both a checkpoint and a config.
void check_config(const std::optional<std::string>& config_path, const model::Checkpoint& ck, Manifest& m) {
    if (!config_path) return;
    m.input(*config_path);
    json j = read_json(*config_path);
    model::ModelConfig cfg = model::ModelConfig::from_json(j.value("model", json::object()));
    cfg.seq_len = ck.config.seq_len;
    if (model::config_hash(cfg) != model::config_hash(ck.config)) {
        throw OpError("config mismatch: " + *config_path + " has model hash " + model::config_hash(cfg) +
                      ", checkpoint has " + model::config_hash(ck.config));
    }
}

std::size_t default_jobs() {
    const unsigned n = std::thread::hardware_concurrency();
    return n ? n : 1;
}

std::string default_out() {
    const char* env = std::getenv("MDFM_OUT_DIR");
    return env && *env ? env : "mdfm_out";
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Common {
    std::string out = default_out();
    std::size_t jobs = default_jobs();
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--out", c.out, "Output directory (default $MDFM_OUT_DIR or ./mdfm_out)");
    cmd->add_option("--jobs", c.jobs, "Worker threads for evaluation")->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::optional<std::string> spec;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_pos, n_neg;
};

void cmd_synth(const SynthArgs& a, Manifest& m) {
    seqdata::PlantedSpec spec;
    if (a.spec) {
        m.input(*a.spec);
        spec = seqdata::PlantedSpec::from_json(read_json(*a.spec));
    }
    if (a.seed) spec.seed = *a.seed;
    if (a.n_pos) spec.n_pos = *a.n_pos;
    if (a.n_neg) spec.n_neg = *a.n_neg;
    m.seed(spec.seed);
    m.config() = spec.to_json();
    const seqdata::Dataset ds = seqdata::synth_planted_dataset(spec);
    seqdata::write_samples_tsv(m.output("train.tsv"), ds.train);
    seqdata::write_samples_tsv(m.output("test.tsv"), ds.test);
    std::ofstream(m.output("spec.json")) << spec.to_json().dump(2) << '\n';
    std::cerr << "synth: " << ds.train.size() << " train, " << ds.test.size() << " test sequences of length "
              << ds.length << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::vector<std::string> data;
    std::optional<std::string> val;
    std::optional<std::string> config;
    std::optional<std::string> grid;
    std::size_t folds = 5;
    std::optional<std::uint64_t> seed;
    // Flag overrides.
    std::optional<std::size_t> epochs, batch_size, d, k, layers, heads, experts;
    std::optional<double> lr, wd, flood, fgm_eps, dropout;
    std::optional<std::string> fusion;
    bool no_fgm = false, no_moe = false, finetune_init = false, no_val = false;
};

void cmd_train(const TrainArgs& a, Manifest& m) {
    json cfg_file = json::object();
    if (a.config) {
        m.input(*a.config);
        cfg_file = read_json(*a.config);
    }
    model::ModelConfig mcfg = model::ModelConfig::from_json(cfg_file.value("model", json::object()));
    trainer::TrainConfig tcfg = trainer::TrainConfig::from_json(cfg_file.value("train", json::object()));
    if (a.d) mcfg.d = *a.d;
    if (a.k) mcfg.k = *a.k;
    if (a.layers) mcfg.encoder_layers = *a.layers;
    if (a.heads) mcfg.encoder_heads = *a.heads;
    if (a.experts) mcfg.n_experts = *a.experts;
    if (a.dropout) mcfg.dropout = *a.dropout;
    if (a.fusion) mcfg.fusion = model::fusion_from_string(*a.fusion);
    if (a.no_moe) mcfg.use_moe = false;
    if (a.epochs) tcfg.epochs = *a.epochs;
    if (a.batch_size) tcfg.batch_size = *a.batch_size;
    if (a.lr) tcfg.lr = *a.lr;
    if (a.wd) tcfg.weight_decay = *a.wd;
    if (a.flood) tcfg.flood = *a.flood;
    if (a.fgm_eps) tcfg.fgm_eps = *a.fgm_eps;
    if (a.no_fgm) tcfg.adversarial = false;
    if (a.finetune_init) tcfg.finetune_init = true;
    if (a.seed) tcfg.seed = *a.seed;

    // Several --data arguments train one model on the concatenated sets.
    std::vector<seqdata::DnaSample> train;
    std::vector<seqdata::DnaSample> val;
    for (const auto& d : a.data) {
        auto part = load_split(d, "train", m);
        train.insert(train.end(), part.begin(), part.end());
    }
    if (a.val) {
        val = load_split(*a.val, "test", m);
    } else if (!a.no_val) {
        for (const auto& d : a.data) {
            if (!fs::is_directory(d)) continue;
            if (fs::exists(fs::path(d) / "test.tsv") || fs::exists(fs::path(d) / "test.fasta") ||
                fs::exists(fs::path(d) / "test.fa")) {
                auto part = load_split(d, "test", m);
                val.insert(val.end(), part.begin(), part.end());
            }
        }
    }
    if (train.empty()) throw OpError("no training samples");
    mcfg.seq_len = train.front().sequence.size();
    mcfg.validate();
    tcfg.validate();
    check_lengths(train, mcfg);
    check_lengths(val, mcfg);

    if (a.grid) {
        m.input(*a.grid);
        const json g = read_json(*a.grid);
        if (!g.is_array() || g.empty()) throw OpError("grid file must hold a non-empty JSON array of train configs");
        std::vector<trainer::TrainConfig> grid;
        json base = tcfg.to_json();
        for (const auto& entry : g) {
            json merged = base;
            merged.merge_patch(entry);
            grid.push_back(trainer::TrainConfig::from_json(merged));
        }
        std::cerr << "train: " << a.folds << "-fold CV over " << grid.size() << " configurations\n";
        const trainer::CvResult cv =
            trainer::cross_validate(train, grid, mcfg, a.folds, tcfg.seed, a.common.jobs);
        cv.write_tsv(m.output("cv.tsv"), grid);
        tcfg = grid[cv.best];
        std::cerr << "train: selected configuration " << cv.best << " (mean AUPRC " << metrics::fmt(cv.mean_auprc[cv.best])
                  << ")\n";
    }

    m.seed(tcfg.seed);
    m.config() = {{"model", mcfg.to_json()}, {"train", tcfg.to_json()}};

    std::ofstream log(m.output("train_log.jsonl"), std::ios::trunc);
    TeeBuf tee(log.rdbuf(), std::cerr.rdbuf());
    std::ostream both(&tee);
    trainer::FitResult fit = trainer::fit(train, val.empty() ? nullptr : &val, mcfg, tcfg, &both, a.common.jobs);
    both.flush();

    model::Checkpoint ck;
    ck.config = mcfg;
    ck.tokenizers = fit.tokenizers;
    ck.params = std::move(fit.params);
    ck.seed = tcfg.seed;
    ck.training = {{"train", tcfg.to_json()}, {"n_train", train.size()}, {"n_val", val.size()}};
    model::save_checkpoint(m.output("model.ckpt"), ck);
    std::ofstream(m.output("config.json")) << m.config().dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string ckpt, data, split = "test";
    std::optional<std::string> config;
    double threshold = 0.5;
};

void cmd_eval(const EvalArgs& a, Manifest& m) {
    const model::Checkpoint ck = load_ckpt(a.ckpt, m);
    check_config(a.config, ck, m);
    const auto samples = load_split(a.data, a.split, m);
    check_lengths(samples, ck.config);
    m.config() = {{"model", ck.config.to_json()}, {"threshold", a.threshold}, {"split", a.split}};
    const std::vector<double> scores =
        trainer::predict_scores(samples, ck.tokenizers, ck.params, ck.config, a.common.jobs);
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    const metrics::MetricReport r = metrics::evaluate(scores, labels, a.threshold);

    std::ofstream(m.output("metrics.json")) << r.to_json().dump(2) << '\n';
    std::ofstream tsv(m.output("metrics.tsv"));
    tsv << metrics::MetricReport::tsv_header() << '\n' << r.tsv_row() << '\n';
    std::ofstream sc(m.output("scores.tsv"));
    sc << "id\tlabel\tscore\tprediction\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        sc << samples[i].id << '\t' << samples[i].label << '\t' << metrics::fmt(scores[i]) << '\t'
           << (scores[i] >= a.threshold ? 1 : 0) << '\n';
    }
    std::cerr << "eval: acc " << metrics::fmt(r.acc) << " auc " << metrics::fmt(r.auc) << " mcc "
              << metrics::fmt(r.mcc) << '\n';
}

// ---------------------------------------------------------------------------

struct SetArgs {
    double threshold = 0.9;
    std::optional<std::size_t> cap;
    std::size_t min_per_class = 2;
    std::string split = "test";
};

void add_set_options(CLI::App* cmd, SetArgs& s, const char* cap_flag) {
    cmd->add_option("--threshold", s.threshold, "High-confidence threshold (strict)")->check(CLI::Range(0.5, 1.0));
    cmd->add_option(cap_flag, s.cap, "Cap on analyzed samples per class");
    cmd->add_option("--min-per-class", s.min_per_class, "Minimum high-confidence samples per class");
    cmd->add_option("--split", s.split, "Split to analyze when --data is a directory");
}

struct CadArgs {
    Common common;
    std::string ckpt, data, view = "kmer", unit = "occurrence";
    std::optional<std::string> config;
    SetArgs sets;
    bool positional = false;
    std::size_t min_samples = 3;
};

void cmd_cad(const CadArgs& a, Manifest& m) {
    const model::Checkpoint ck = load_ckpt(a.ckpt, m);
    check_config(a.config, ck, m);
    const auto samples = load_split(a.data, a.sets.split, m);
    check_lengths(samples, ck.config);
    interpret::CadOptions opts;
    opts.view = model::view_from_string(a.view);
    if (opts.view == model::View::bpe && !ck.config.has_bpe_view()) throw OpError("model has no BPE view");
    opts.positional = a.positional;
    opts.unit = a.unit == "sequence" ? interpret::CadUnit::sequence : interpret::CadUnit::occurrence;
    opts.min_samples = a.min_samples;
    m.config() = {{"view", a.view},       {"unit", a.unit},
                  {"positional", a.positional}, {"min_samples", a.min_samples},
                  {"threshold", a.sets.threshold}, {"cap", a.sets.cap ? json(*a.sets.cap) : json(nullptr)}};

    const auto sets = interpret::select_high_confidence(ck, samples, a.sets.threshold, a.sets.cap,
                                                        a.sets.min_per_class, a.common.jobs);
    const interpret::CadReport rep = interpret::cad_analysis(sets, opts);
    rep.write_tsv(m.output("cad.tsv"));
    std::cerr << "cad: " << sets.pos.size() << " positives, " << sets.neg.size() << " negatives, "
              << rep.records.size() << " motifs tested (" << rep.skipped_min_samples << " below min samples, "
              << rep.skipped_degenerate << " degenerate)\n";
}

// ---------------------------------------------------------------------------

struct CwgaArgs {
    Common common;
    std::string ckpt, data, view = "both", baseline = "zero";
    std::optional<std::string> config;
    SetArgs sets;
    std::size_t top_dims = 40;
    int ig_steps = 64;
    bool positional = false, per_dim = false;
    std::size_t fasta_top = 10, flank = 4;
};

void cmd_cwga(const CwgaArgs& a, Manifest& m) {
    const model::Checkpoint ck = load_ckpt(a.ckpt, m);
    check_config(a.config, ck, m);
    const auto samples = load_split(a.data, a.sets.split, m);
    check_lengths(samples, ck.config);

    std::vector<model::View> views;
    if (a.view == "both") {
        views.push_back(model::View::kmer);
        if (ck.config.has_bpe_view()) views.push_back(model::View::bpe);
    } else {
        views.push_back(model::view_from_string(a.view));
        if (views.back() == model::View::bpe && !ck.config.has_bpe_view()) throw OpError("model has no BPE view");
    }
    interpret::CwgaOptions opts;
    opts.ig_steps = a.ig_steps;
    opts.baseline = a.baseline == "pad" ? interpret::Baseline::pad : interpret::Baseline::zero;
    opts.positional = a.positional;
    opts.jobs = a.common.jobs;
    m.config() = {{"view", a.view},         {"baseline", a.baseline},     {"ig_steps", a.ig_steps},
                  {"top_dims", a.top_dims}, {"positional", a.positional}, {"per_dim", a.per_dim},
                  {"threshold", a.sets.threshold}, {"n_samples", a.sets.cap ? json(*a.sets.cap) : json(nullptr)}};

    const auto sets = interpret::select_high_confidence(ck, samples, a.sets.threshold, a.sets.cap,
                                                        a.sets.min_per_class, a.common.jobs);
    bool truncated = false;
    const auto dims = interpret::cwga_dim_select(sets, a.top_dims, &truncated);
    if (truncated) std::cerr << "cwga: --top-dims exceeds d, using all " << dims.size() << " dimensions\n";
    {
        std::ofstream f(m.output("cwga_dims.tsv"));
        f << "rank\tdim\tdelta\tcohens_d\tp\n";
        for (const auto& s : dims) {
            f << s.rank << '\t' << s.dim << '\t' << metrics::fmt(s.delta) << '\t' << metrics::fmt(s.d) << '\t'
              << metrics::fmt(s.p) << '\n';
        }
    }
    const fs::path tsv = m.output("cwga.tsv");
    std::vector<interpret::CwgaRecord> kmer_records;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto attr = a.per_dim ? interpret::cwga_attribute(ck, sets, dims, views[i], opts)
                                    : interpret::cwga_attribute_fused(ck, sets, dims, views[i], opts);
        const interpret::CwgaReport rep = interpret::cwga_aggregate(attr);
        rep.write_tsv(tsv, i > 0);
        if (rep.all_zero) std::cerr << "cwga: all attributions are zero for view " << model::to_string(views[i]) << '\n';
        if (views[i] == model::View::kmer) kmer_records = rep.records;
        std::cerr << "cwga: " << model::to_string(views[i]) << " view, " << rep.records.size() << " tokens\n";
    }
    if (!kmer_records.empty()) {
        std::vector<seqdata::DnaSample> positives;
        for (const auto& s : sets.pos) positives.push_back(s.sample);
        const std::size_t n =
            interpret::export_motif_fasta(kmer_records, positives, a.fasta_top, a.flank, m.output("cwga_motifs.fasta"));
        std::cerr << "cwga: " << n << " motif windows exported\n";
    }
}

// ---------------------------------------------------------------------------

struct MutateArgs {
    Common common;
    std::string ckpt, data, split = "test";
    std::optional<std::string> config, rules;
    bool per_sequence = false;
};

void cmd_mutate(const MutateArgs& a, Manifest& m) {
    const model::Checkpoint ck = load_ckpt(a.ckpt, m);
    check_config(a.config, ck, m);
    const auto samples = load_split(a.data, a.split, m);
    check_lengths(samples, ck.config);
    std::vector<perturb::RuleSet> sets;
    if (a.rules) {
        m.input(*a.rules);
        sets = perturb::rule_sets_from_json(read_json(*a.rules));
    } else {
        sets = perturb::default_rule_sets();
    }
    json cfg_sets = json::array();
    for (const auto& s : sets) {
        json rules = json::array();
        for (const auto& r : s.rules) rules.push_back(r.to_json());
        cfg_sets.push_back({{"name", s.name}, {"rules", rules}});
    }
    m.config() = {{"rule_sets", cfg_sets}, {"split", a.split}};
    const perturb::MutagenesisReport rep = perturb::mutagenesis_eval(ck, samples, sets, a.common.jobs);
    rep.write_tsv(m.output("mutagenesis.tsv"));
    std::ofstream(m.output("mutagenesis.json")) << rep.to_json(a.per_sequence).dump(2) << '\n';
    for (const auto& c : rep.conditions) {
        std::cerr << "mutate: " << c.name << " SN " << metrics::fmt(c.metrics.sn) << " SP "
                  << metrics::fmt(c.metrics.sp) << " (" << c.mutated_sequences << " sequences edited)\n";
    }
}

// ---------------------------------------------------------------------------

struct TransferArgs {
    Common common;
    std::string ckpts, datasets, metric = "auc", split = "test";
    std::optional<std::string> names;
};

void cmd_transfer(const TransferArgs& a, Manifest& m) {
    const auto ck_paths = split_list(a.ckpts);
    const auto data_paths = split_list(a.datasets);
    if (ck_paths.size() != data_paths.size()) {
        throw OpError("--ckpts and --datasets must list the same number of entries (checkpoint i was trained on "
                      "dataset i)");
    }
    std::vector<std::string> names;
    if (a.names) {
        names = split_list(*a.names);
        if (names.size() != data_paths.size()) throw OpError("--names must have one entry per dataset");
    } else {
        for (const auto& p : data_paths) names.push_back(fs::path(p).filename().string());
    }
    std::vector<model::Checkpoint> cks;
    for (const auto& p : ck_paths) cks.push_back(load_ckpt(p, m));
    std::vector<std::vector<seqdata::DnaSample>> data;
    for (const auto& p : data_paths) {
        data.push_back(load_split(p, a.split, m));
        for (const auto& ck : cks) check_lengths(data.back(), ck.config);
    }
    m.config() = {{"metric", a.metric}, {"names", names}, {"split", a.split}};
    const perturb::TransferMatrix tm = perturb::transfer_matrix(
        cks, names, data, names, perturb::transfer_metric_from_string(a.metric), a.common.jobs);
    tm.write_tsv(m.output("transfer_raw.tsv"), m.output("transfer_normalized.tsv"));
    for (std::size_t i = 0; i < tm.unnormalized.size(); ++i) {
        if (tm.unnormalized[i]) std::cerr << "transfer: row " << names[i] << " has a zero diagonal, left unnormalized\n";
    }
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
    Common common;
    std::string ckpt, data, stage = "post_film", split = "test";
    std::optional<std::string> config;
};

void cmd_embed(const EmbedArgs& a, Manifest& m) {
    const model::Checkpoint ck = load_ckpt(a.ckpt, m);
    check_config(a.config, ck, m);
    const auto samples = load_split(a.data, a.split, m);
    check_lengths(samples, ck.config);
    const model::Stage stage = model::stage_from_string(a.stage);
    m.config() = {{"stage", a.stage}, {"split", a.split}};
    m.seed(ck.seed);
    model::export_stage_embeddings(samples, ck, stage, m.output("embeddings_" + a.stage + ".tsv"), a.common.jobs);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mdfm: dual-view FiLM-MoE methylation classifier and signal-purification tools"};
    app.require_subcommand(1);
    app.set_version_flag("--version", MDFM_VERSION);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Write a planted-motif synthetic dataset");
    add_common(c_synth, synth.common);
    c_synth->add_option("--spec", synth.spec, "PlantedSpec JSON")->check(CLI::ExistingFile);
    c_synth->add_option("--seed", synth.seed, "Override the spec seed");
    c_synth->add_option("--n-pos", synth.n_pos, "Positive training samples");
    c_synth->add_option("--n-neg", synth.n_neg, "Negative training samples");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a model and write model.ckpt");
    add_common(c_train, train.common);
    c_train->add_option("--data", train.data, "Dataset directory or sample file; repeat to concatenate")->required();
    c_train->add_option("--val", train.val, "Validation data (default: test split of --data directories)");
    c_train->add_flag("--no-val", train.no_val, "Skip per-epoch validation");
    c_train->add_option("--config", train.config, "JSON with \"model\" and \"train\" sections")
        ->check(CLI::ExistingFile);
    c_train->add_option("--grid", train.grid, "JSON array of train-config patches for stratified CV")
        ->check(CLI::ExistingFile);
    c_train->add_option("--folds", train.folds, "CV folds")->check(CLI::Range(2, 100));
    c_train->add_option("--seed", train.seed, "Training seed");
    c_train->add_option("--epochs", train.epochs);
    c_train->add_option("--batch-size", train.batch_size);
    c_train->add_option("--lr", train.lr);
    c_train->add_option("--weight-decay", train.wd);
    c_train->add_option("--flood", train.flood, "Flooding level b");
    c_train->add_option("--fgm-eps", train.fgm_eps);
    c_train->add_flag("--no-fgm", train.no_fgm, "Disable adversarial training");
    c_train->add_flag("--finetune-init", train.finetune_init, "Warm up each encoder before joint training");
    c_train->add_option("--d", train.d, "Hidden width");
    c_train->add_option("--k", train.k, "k-mer size");
    c_train->add_option("--layers", train.layers, "Encoder layers");
    c_train->add_option("--heads", train.heads, "Encoder attention heads");
    c_train->add_option("--experts", train.experts, "MoE experts");
    c_train->add_option("--dropout", train.dropout);
    c_train->add_option("--fusion", train.fusion)
        ->check(CLI::IsMember({"film", "reverse_film", "concat", "single_encoder"}));
    c_train->add_flag("--no-moe", train.no_moe, "Bypass the MoE stage");

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(c_eval, eval.common);
    c_eval->add_option("--ckpt", eval.ckpt)->required();
    c_eval->add_option("--data", eval.data)->required();
    c_eval->add_option("--split", eval.split);
    c_eval->add_option("--config", eval.config, "Fail unless the model section matches the checkpoint")
        ->check(CLI::ExistingFile);
    c_eval->add_option("--threshold", eval.threshold)->check(CLI::Range(0.0, 1.0));

    CadArgs cad;
    auto* c_cad = app.add_subcommand("cad", "Contrastive attention difference motif test");
    add_common(c_cad, cad.common);
    c_cad->add_option("--ckpt", cad.ckpt)->required();
    c_cad->add_option("--data", cad.data)->required();
    c_cad->add_option("--config", cad.config)->check(CLI::ExistingFile);
    c_cad->add_option("--view", cad.view)->check(CLI::IsMember({"kmer", "bpe"}));
    c_cad->add_option("--unit", cad.unit)->check(CLI::IsMember({"occurrence", "sequence"}));
    c_cad->add_flag("--positional", cad.positional, "Group by token and position");
    c_cad->add_option("--min-samples", cad.min_samples);
    add_set_options(c_cad, cad.sets, "--cap");

    CwgaArgs cwga;
    auto* c_cwga = app.add_subcommand("cwga", "Contrastive weighted gradient attribution");
    add_common(c_cwga, cwga.common);
    c_cwga->add_option("--ckpt", cwga.ckpt)->required();
    c_cwga->add_option("--data", cwga.data)->required();
    c_cwga->add_option("--config", cwga.config)->check(CLI::ExistingFile);
    c_cwga->add_option("--view", cwga.view)->check(CLI::IsMember({"kmer", "bpe", "both"}));
    c_cwga->add_option("--top-dims", cwga.top_dims)->check(CLI::PositiveNumber);
    c_cwga->add_option("--ig-steps", cwga.ig_steps)->check(CLI::PositiveNumber);
    c_cwga->add_option("--baseline", cwga.baseline)->check(CLI::IsMember({"zero", "pad"}));
    c_cwga->add_flag("--positional", cwga.positional);
    c_cwga->add_flag("--per-dim", cwga.per_dim, "One IG run per dimension instead of the fused target");
    c_cwga->add_option("--fasta-top", cwga.fasta_top, "Top k-mer records exported as FASTA windows");
    c_cwga->add_option("--flank", cwga.flank);
    add_set_options(c_cwga, cwga.sets, "--n-samples");

    MutateArgs mutate;
    auto* c_mutate = app.add_subcommand("mutate", "In-silico mutagenesis");
    add_common(c_mutate, mutate.common);
    c_mutate->add_option("--ckpt", mutate.ckpt)->required();
    c_mutate->add_option("--data", mutate.data)->required();
    c_mutate->add_option("--split", mutate.split);
    c_mutate->add_option("--config", mutate.config)->check(CLI::ExistingFile);
    c_mutate->add_option("--rules", mutate.rules, "JSON rules file (default GAGG->CTCC, AAAA->TATA)")
        ->check(CLI::ExistingFile);
    c_mutate->add_flag("--per-sequence", mutate.per_sequence, "Include per-sequence edit counts in the JSON");

    TransferArgs transfer;
    auto* c_transfer = app.add_subcommand("transfer", "Cross-dataset transfer matrix");
    add_common(c_transfer, transfer.common);
    c_transfer->add_option("--ckpts", transfer.ckpts, "Comma-separated checkpoints")->required();
    c_transfer->add_option("--datasets", transfer.datasets, "Comma-separated datasets, paired with --ckpts")
        ->required();
    c_transfer->add_option("--names", transfer.names, "Comma-separated row/column names");
    c_transfer->add_option("--metric", transfer.metric)->check(CLI::IsMember({"acc", "auc"}));
    c_transfer->add_option("--split", transfer.split);

    EmbedArgs embed;
    auto* c_embed = app.add_subcommand("embed", "Export stage embeddings");
    add_common(c_embed, embed.common);
    c_embed->add_option("--ckpt", embed.ckpt)->required();
    c_embed->add_option("--data", embed.data)->required();
    c_embed->add_option("--split", embed.split);
    c_embed->add_option("--config", embed.config)->check(CLI::ExistingFile);
    c_embed->add_option("--stage", embed.stage)
        ->check(CLI::IsMember({"raw", "post_encoder", "post_film", "post_moe"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        auto run = [&](const char* name, const Common& common, auto&& fn) {
            Manifest m(name, common.out);
            fn(m);
            m.write(args);
        };
        if (*c_synth) run("synth", synth.common, [&](Manifest& m) { cmd_synth(synth, m); });
        else if (*c_train) run("train", train.common, [&](Manifest& m) { cmd_train(train, m); });
        else if (*c_eval) run("eval", eval.common, [&](Manifest& m) { cmd_eval(eval, m); });
        else if (*c_cad) run("cad", cad.common, [&](Manifest& m) { cmd_cad(cad, m); });
        else if (*c_cwga) run("cwga", cwga.common, [&](Manifest& m) { cmd_cwga(cwga, m); });
        else if (*c_mutate) run("mutate", mutate.common, [&](Manifest& m) { cmd_mutate(mutate, m); });
        else if (*c_transfer) run("transfer", transfer.common, [&](Manifest& m) { cmd_transfer(transfer, m); });
        else if (*c_embed) run("embed", embed.common, [&](Manifest& m) { cmd_embed(embed, m); });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
