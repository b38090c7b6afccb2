// Pipeline driver: corpus generation, base-model training, redundant-layer
// identification via speculative-decoding throughput, hybrid construction,
// distillation, evaluation, and report aggregation.

#include "CLI11.hpp"

#include "spd/bayesopt.hpp"
#include "spd/checkpoint.hpp"
#include "spd/corpus.hpp"
#include "spd/distill.hpp"
#include "spd/eval.hpp"
#include "spd/lm.hpp"
#include "spd/specdec.hpp"
#include "spd/ssm.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string & path, const std::string & text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw spd::io_error("cannot write " + path);
    }
    f << text;
}

void write_snapshot(const std::string & dir, const std::string & command, const json & cfg) {
    fs::create_directories(dir);
    json snap;
    snap["command"] = command;
    snap["config"] = cfg;
    write_text(dir + "/resolved_config." + command + ".json", snap.dump(2) + "\n");
}

std::string format_indices(const std::vector<int> & idx) {
    std::string s = "[";
    for (size_t i = 0; i < idx.size(); ++i) {
        s += std::to_string(idx[i]);
        if (i + 1 < idx.size()) {
            s += ", ";
        }
    }
    return s + "]";
}

spd::CorpusConfig corpus_config_from_manifest(const std::string & dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) {
        throw spd::io_error("missing corpus manifest in " + dir);
    }
    json m = json::parse(f);
    spd::CorpusConfig cc;
    cc.vocab_size = m.at("vocab_size");
    cc.active_tokens = m.at("active_tokens");
    cc.support = m.at("support");
    cc.concentration = m.at("concentration");
    cc.template_rate = m.at("template_rate");
    cc.chunk_len = m.at("chunk_len");
    cc.key_len = m.at("key_len");
    cc.key_alphabet = m.at("key_alphabet");
    cc.gap_min = m.at("gap_min");
    cc.gap_max = m.at("gap_max");
    cc.sequential_keys = m.value("sequential_keys", false);
    cc.seed = m.at("seed");
    return cc;
}

spd::Corpus load_corpus(const std::string & dir) {
    return spd::split_corpus(spd::read_tokens_u16(dir + "/corpus.bin"));
}

// deterministic prompt windows from the held-out split
std::vector<std::vector<int>> sample_prompts(const std::vector<int> & tokens, int count,
                                             int len, uint64_t seed) {
    if ((int64_t) tokens.size() <= len + 1) {
        throw spd::input_error("corpus too small for prompt sampling");
    }
    spd::Rng rng(seed);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < count; ++i) {
        const int64_t s = rng.uniform_int64((int64_t) tokens.size() - len - 1);
        out.emplace_back(tokens.begin() + s, tokens.begin() + s + len);
    }
    return out;
}

// ---- gen-data ----

struct GenDataArgs {
    std::string out = "runs/data";
    spd::CorpusConfig cc;
    int64_t tokens = 600000;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs & a) {
    const std::string corpus_path = a.out + "/corpus.bin";
    if (fs::exists(corpus_path) && !a.force) {
        throw spd::io_error("corpus exists at " + corpus_path + " (use --force to overwrite)");
    }
    fs::create_directories(a.out);
    spd::MarkovSource src(a.cc);
    spd::Rng rng(a.cc.seed);
    auto tokens = src.sample_corpus(a.tokens, rng);
    spd::write_tokens_u16(corpus_path, tokens);

    json manifest;
    manifest["vocab_size"] = a.cc.vocab_size;
    manifest["active_tokens"] = a.cc.active_tokens;
    manifest["support"] = a.cc.support;
    manifest["concentration"] = a.cc.concentration;
    manifest["template_rate"] = a.cc.template_rate;
    manifest["chunk_len"] = a.cc.chunk_len;
    manifest["key_len"] = a.cc.key_len;
    manifest["key_alphabet"] = a.cc.key_alphabet;
    manifest["gap_min"] = a.cc.gap_min;
    manifest["gap_max"] = a.cc.gap_max;
    manifest["sequential_keys"] = a.cc.sequential_keys;
    manifest["seed"] = a.cc.seed;
    manifest["tokens"] = a.tokens;
    manifest["entropy_rate_nats"] = src.entropy_rate();
    write_text(a.out + "/manifest.json", manifest.dump(2) + "\n");
    write_snapshot(a.out, "gen-data", manifest);
    std::printf("gen-data: wrote %lld tokens to %s (entropy %.4f nats/token)\n",
                (long long) a.tokens, corpus_path.c_str(), src.entropy_rate());
    return 0;
}

// ---- train-base ----

struct TrainBaseArgs {
    std::string data = "runs/data";
    std::string out = "runs/base";
    spd::ModelConfig mc;
    spd::TrainBaseConfig tc;
};

int cmd_train_base(const TrainBaseArgs & a) {
    auto corpus = load_corpus(a.data);
    spd::ModelConfig mc = a.mc;
    if (mc.d_model % mc.n_heads != 0) {
        throw spd::config_error("d_model must be divisible by heads");
    }
    mc.d_head = mc.d_model / mc.n_heads;
    auto model = spd::init_model(mc);
    auto res = spd::train_base(model, corpus.train, corpus.heldout, a.tc);
    fs::create_directories(a.out);
    spd::save_model(a.out + "/base.ckpt", model);

    std::string csv = "step,lr,loss\n";
    for (const auto & r : res.log) {
        char line[128];
        std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g\n", (long long) r.step, r.lr, r.loss);
        csv += line;
    }
    write_text(a.out + "/train_base.csv", csv);

    json cfg;
    cfg["model"] = {{"n_layers", mc.n_layers},     {"d_model", mc.d_model},
                    {"n_heads", mc.n_heads},       {"d_head", mc.d_head},
                    {"vocab_size", mc.vocab_size}, {"max_seq_len", mc.max_seq_len},
                    {"seed", mc.seed}};
    cfg["train"] = {{"steps", a.tc.steps},       {"batch_size", a.tc.batch_size},
                    {"context_len", a.tc.context_len}, {"peak_lr", a.tc.peak_lr},
                    {"min_lr", a.tc.min_lr},     {"seed", a.tc.seed}};
    cfg["heldout_ce"] = res.heldout_ce;
    write_snapshot(a.out, "train-base", cfg);
    std::printf("train-base: heldout cross entropy %.4f nats (uniform %.4f), checkpoint %s\n",
                res.heldout_ce, std::log((double) mc.vocab_size), (a.out + "/base.ckpt").c_str());
    return 0;
}

// ---- identify ----

struct IdentifyArgs {
    std::string base = "runs/base/base.ckpt";
    std::string data = "runs/data";
    std::string out = "runs/identify";
    int k = 3;
    int iterations = 60;
    int prompts = 4;
    int prompt_len = 32;
    int new_tokens = 32;
    int spec_k = 4;
    uint64_t seed = 17;
    bool also_worse = false;
    std::string warm_start_csv;
    bool sample_mode = false;
    bool wall_clock = false;
};

int cmd_identify(const IdentifyArgs & a) {
    auto model = spd::load_model(a.base);
    auto corpus = load_corpus(a.data);
    auto prompts = sample_prompts(corpus.heldout, a.prompts, a.prompt_len, a.seed ^ 0xabcd);

    spd::SpecDecConfig sc;
    sc.K = a.spec_k;
    sc.max_new_tokens = a.new_tokens;
    sc.mode = a.sample_mode ? spd::SpecDecConfig::Mode::sample : spd::SpecDecConfig::Mode::greedy;
    sc.seed = a.seed ^ 0x5eed;
    sc.wall_clock = a.wall_clock;

    auto objective = [&](const spd::SkipConfig & skip) {
        return spd::measure_throughput(model, skip, prompts, sc).mean_tau;
    };

    spd::BoConfig bc;
    bc.dim = model.cfg.n_layers;
    bc.k = a.k;
    bc.iterations = a.iterations;
    bc.seed = a.seed;
    if (!a.warm_start_csv.empty()) {
        bc.preloaded = spd::import_history_csv(a.warm_start_csv);
    }

    fs::create_directories(a.out);

    // one structured stats record per measured configuration
    std::string stats_records;
    auto record_stats = [&](const std::string & label, const spd::SkipConfig & skip,
                            const spd::ThroughputMeasurement & m) {
        json rec;
        rec["label"] = label;
        rec["skip_config"] = skip.bitstring();
        rec["K"] = sc.K;
        rec["prompts"] = (int) prompts.size();
        rec["beta_hat"] = m.aggregate.beta_hat();
        rec["tau"] = m.mean_tau;
        rec["tau_stderr"] = m.stderr_tau;
        rec["accept_histogram"] = m.aggregate.accept_hist;
        stats_records += rec.dump() + "\n";
    };

    auto opt = spd::bo_optimize(objective, bc);
    spd::write_history_csv(a.out + "/history_opt.csv", opt.history);
    write_text(a.out + "/opt.skip", opt.best.bitstring() + "\n");

    auto opt_m = spd::measure_throughput(model, opt.best, prompts, sc);
    record_stats("opt", opt.best, opt_m);
    std::string report;
    {
        char line[256];
        std::snprintf(line, sizeof(line), "opt   %s  <tau> %.2f (%.2f)\n",
                      format_indices(opt.best.indices()).c_str(), opt_m.mean_tau,
                      opt_m.stderr_tau);
        report += line;
    }

    if (a.also_worse) {
        spd::BoConfig wc = bc;
        wc.minimize = true;
        wc.seed = a.seed ^ 0x77;
        wc.warm_hints = {opt.best};   // reverse run seeded with the opt solution
        auto worse = spd::bo_optimize(objective, wc);
        spd::write_history_csv(a.out + "/history_worse.csv", worse.history);
        write_text(a.out + "/worse.skip", worse.best.bitstring() + "\n");
        auto worse_m = spd::measure_throughput(model, worse.best, prompts, sc);
        record_stats("worse", worse.best, worse_m);
        char line[256];
        std::snprintf(line, sizeof(line), "worse %s  <tau> %.2f (%.2f)\n",
                      format_indices(worse.best.indices()).c_str(), worse_m.mean_tau,
                      worse_m.stderr_tau);
        report += line;
    }

    write_text(a.out + "/stats.jsonl", stats_records);
    write_text(a.out + "/identify.txt", report);
    std::fputs(report.c_str(), stdout);

    json cfg;
    cfg["k"] = a.k;
    cfg["iterations"] = a.iterations;
    cfg["prompts"] = a.prompts;
    cfg["prompt_len"] = a.prompt_len;
    cfg["new_tokens"] = a.new_tokens;
    cfg["spec_k"] = a.spec_k;
    cfg["seed"] = a.seed;
    cfg["mode"] = a.sample_mode ? "sample" : "greedy";
    cfg["opt"] = opt.best.bitstring();
    write_snapshot(a.out, "identify", cfg);
    return 0;
}

// ---- build-hybrid ----

struct BuildArgs {
    std::string base = "runs/base/base.ckpt";
    std::string skip;           // bitstring or path to a .skip file
    std::string kind = "longhorn";
    std::string out = "runs/hybrid/hybrid.ckpt";
    uint64_t seed = 23;
    bool no_zero_init = false;
    int verify_prompts = 10;
};

spd::SkipConfig parse_skip(const std::string & arg, int n_layers) {
    std::string bits = arg;
    if (fs::exists(arg)) {
        std::ifstream f(arg);
        f >> bits;
    }
    auto skip = spd::SkipConfig::from_bitstring(bits);
    if (skip.size() != n_layers) {
        throw spd::config_error("skip length " + std::to_string(skip.size()) +
                                " != n_layers " + std::to_string(n_layers));
    }
    return skip;
}

int cmd_build(const BuildArgs & a) {
    auto base = spd::load_model(a.base);
    auto skip = parse_skip(a.skip, base.cfg.n_layers);
    auto kind = spd::ssm_kind_from_name(a.kind);
    auto hybrid = spd::build_hybrid(base, skip, kind, a.seed, !a.no_zero_init);

    spd::Rng rng(a.seed ^ 0xf00d);
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < a.verify_prompts; ++i) {
        std::vector<int> p(16);
        for (auto & t : p) t = (int) rng.uniform_int64(base.cfg.vocab_size);
        prompts.push_back(std::move(p));
    }
    const double gap = spd::init_equivalence_gap(hybrid, base, prompts);

    const auto dir = fs::path(a.out).parent_path().string();
    fs::create_directories(dir.empty() ? "." : dir);
    json verify;
    verify["init_equivalence_gap"] = gap;
    verify["zero_init"] = !a.no_zero_init;
    verify["prompts"] = a.verify_prompts;
    write_text(a.out + ".verify.json", verify.dump(2) + "\n");

    if (!a.no_zero_init && gap > 1e-12) {
        throw spd::numeric_error("init-equivalence check failed (gap " + std::to_string(gap) +
                                 "); refusing to write a malformed hybrid");
    }
    spd::save_hybrid(a.out, hybrid);

    json cfg;
    cfg["skip"] = skip.bitstring();
    cfg["kind"] = a.kind;
    cfg["seed"] = a.seed;
    cfg["zero_init"] = !a.no_zero_init;
    cfg["init_equivalence_gap"] = gap;
    write_snapshot(dir.empty() ? "." : dir, "build-hybrid", cfg);
    std::printf("build-hybrid: skip=%s kind=%s gap=%.3g -> %s\n", skip.bitstring().c_str(),
                a.kind.c_str(), gap, a.out.c_str());
    return 0;
}

// ---- distill ----

struct DistillArgs {
    std::string hybrid = "runs/hybrid/hybrid.ckpt";
    std::string teacher = "runs/base/base.ckpt";
    std::string data = "runs/data";
    std::string out = "runs/distill";
    spd::DistillConfig dc;
    std::string mode = "self";
};

int cmd_distill(const DistillArgs & a) {
    auto hybrid = spd::load_hybrid(a.hybrid);
    auto teacher = spd::load_model(a.teacher);
    auto corpus = load_corpus(a.data);

    spd::DistillConfig dc = a.dc;
    dc.mode = a.mode == "standard" ? spd::DistillConfig::Mode::standard
                                   : spd::DistillConfig::Mode::self_distill;
    fs::create_directories(a.out);
    if (dc.checkpoint_every > 0 && dc.checkpoint_path.empty()) {
        dc.checkpoint_path = a.out + "/hybrid";
    }

    auto log = spd::distill_train(hybrid, teacher, corpus.train, corpus.heldout, dc);
    spd::write_trainlog_csv(a.out + "/trainlog.csv", log);
    if (!log.evals.empty()) {
        std::string csv = "step,eval_kl\n";
        for (const auto & e : log.evals) {
            char line[96];
            std::snprintf(line, sizeof(line), "%lld,%.17g\n", (long long) e.step, e.eval_kl);
            csv += line;
        }
        write_text(a.out + "/evallog.csv", csv);
    }
    spd::save_hybrid(a.out + "/distilled.ckpt", hybrid);

    json cfg;
    cfg["mode"] = a.mode;
    cfg["steps"] = dc.steps;
    cfg["batch_size"] = dc.batch_size;
    cfg["context_len"] = dc.context_len;
    cfg["peak_lr"] = dc.peak_lr;
    cfg["min_lr"] = dc.min_lr;
    cfg["seed"] = dc.seed;
    cfg["start_step"] = dc.start_step;
    write_snapshot(a.out, "distill", cfg);
    if (!log.rows.empty()) {
        std::printf("distill: %lld steps, first loss %.5f, last loss %.5f -> %s\n",
                    (long long) log.rows.size(), log.rows.front().loss, log.rows.back().loss,
                    (a.out + "/distilled.ckpt").c_str());
    }
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string model;          // hybrid or base checkpoint
    std::string teacher = "runs/base/base.ckpt";
    std::string data = "runs/data";
    std::string out = "runs/eval";
    std::string id = "model";
    int prompts = 8;
    int prompt_len = 48;
    int passkey_trials = 20;
    int passkey_context = 96;
    uint64_t seed = 29;
};

int cmd_eval(const EvalArgs & a) {
    auto teacher = spd::load_model(a.teacher);
    auto corpus = load_corpus(a.data);
    auto cc = corpus_config_from_manifest(a.data);
    spd::MarkovSource src(cc);

    // the model under evaluation: hybrid checkpoint, or a base checkpoint
    spd::HybridModel hybrid;
    spd::ToyLM plain;
    spd::ModelView mv;
    bool is_hybrid = true;
    try {
        hybrid = spd::load_hybrid(a.model);
        mv = spd::view_of(hybrid);
    } catch (const spd::io_error &) {
        plain = spd::load_model(a.model);
        mv = spd::view_of(plain);
        is_hybrid = false;
    }

    auto prompts = sample_prompts(corpus.heldout, a.prompts, a.prompt_len, a.seed);
    spd::EvalReport rep;
    rep.model_id = a.id;
    rep.agreement_rate = spd::agreement(spd::view_of(teacher), mv, prompts);
    rep.mean_kl = spd::mean_kl(spd::view_of(teacher), mv, prompts);
    rep.perplexity = spd::perplexity(mv, corpus.heldout, a.prompt_len);
    rep.passkey = spd::passkey_eval(mv, src, {0.0, 0.25, 0.5, 0.75},
                                    std::min(a.passkey_context, teacher.cfg.max_seq_len - 8),
                                    a.passkey_trials, a.seed ^ 0xbeef);

    fs::create_directories(a.out);
    spd::write_eval_report_csv(a.out + "/eval_" + a.id + ".csv", {rep});
    json jr;
    jr["model"] = rep.model_id;
    jr["agreement"] = rep.agreement_rate;
    jr["mean_kl"] = rep.mean_kl;
    jr["perplexity"] = rep.perplexity;
    for (const auto & pk : rep.passkey) {
        jr["passkey"].push_back(
            {{"depth", pk.depth}, {"exact_match", pk.exact_match}, {"trials", pk.trials}});
    }
    write_text(a.out + "/eval_" + a.id + ".json", jr.dump(2) + "\n");

    json cfg;
    cfg["model"] = a.model;
    cfg["id"] = a.id;
    cfg["is_hybrid"] = is_hybrid;
    cfg["prompts"] = a.prompts;
    cfg["seed"] = a.seed;
    write_snapshot(a.out, "eval", cfg);
    std::printf("eval %s: agreement %.4f, mean KL %.6f, ppl %.3f\n", a.id.c_str(),
                rep.agreement_rate, rep.mean_kl, rep.perplexity);
    return 0;
}

// ---- report ----

struct ReportArgs {
    std::vector<std::string> trainlogs;   // label=path
    std::vector<std::string> evals;       // label=path
    std::string out = "runs/summary.csv";
    double final_phase = 0.1;
};

double final_phase_mean(const std::string & path, double frac) {
    std::ifstream f(path);
    if (!f) {
        throw spd::io_error("missing train log " + path);
    }
    std::string line;
    std::getline(f, line);   // header
    std::vector<double> losses;
    while (std::getline(f, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const auto c3 = line.find(',', c2 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            continue;
        }
        losses.push_back(std::stod(line.substr(c2 + 1, c3 - c2 - 1)));
    }
    if (losses.empty()) {
        throw spd::input_error("empty train log " + path);
    }
    const size_t n = std::max<size_t>(1, (size_t) ((double) losses.size() * frac));
    double acc = 0.0;
    for (size_t i = losses.size() - n; i < losses.size(); ++i) {
        acc += losses[i];
    }
    return acc / (double) n;
}

int cmd_report(const ReportArgs & a) {
    std::string csv = "metric,label,value\n";
    std::map<std::string, double> finals;
    for (const auto & spec : a.trainlogs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) {
            throw spd::config_error("expected label=path in --trainlog, got " + spec);
        }
        const std::string label = spec.substr(0, eq);
        const double v = final_phase_mean(spec.substr(eq + 1), a.final_phase);
        finals[label] = v;
        char line[160];
        std::snprintf(line, sizeof(line), "final_phase_mean_kl,%s,%.10g\n", label.c_str(), v);
        csv += line;
    }
    if (finals.count("opt") && finals.count("worse")) {
        char line[160];
        std::snprintf(line, sizeof(line), "opt_minus_worse_final_kl,opt-worse,%.10g\n",
                      finals.at("opt") - finals.at("worse"));
        csv += line;
    }
    for (const auto & spec : a.evals) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) {
            throw spd::config_error("expected label=path in --eval, got " + spec);
        }
        std::ifstream f(spec.substr(eq + 1));
        if (!f) {
            throw spd::io_error("missing eval report " + spec.substr(eq + 1));
        }
        std::string header, row;
        std::getline(f, header);
        std::getline(f, row);
        // model,agreement,mean_kl,perplexity
        std::vector<std::string> cols;
        size_t pos = 0;
        while (pos != std::string::npos) {
            const auto nxt = row.find(',', pos);
            cols.push_back(row.substr(pos, nxt == std::string::npos ? nxt : nxt - pos));
            pos = nxt == std::string::npos ? nxt : nxt + 1;
        }
        if (cols.size() >= 4) {
            csv += "agreement," + spec.substr(0, eq) + "," + cols[1] + "\n";
            csv += "mean_kl," + spec.substr(0, eq) + "," + cols[2] + "\n";
            csv += "perplexity," + spec.substr(0, eq) + "," + cols[3] + "\n";
        }
    }
    const auto dir = fs::path(a.out).parent_path().string();
    if (!dir.empty()) {
        fs::create_directories(dir);
    }
    write_text(a.out, csv);
    std::printf("report: wrote %s\n", a.out.c_str());
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"speculative-throughput-guided attention-to-SSM distillation pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML config file; flags override file values");

    GenDataArgs gd;
    auto * gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    gen->add_option("--out", gd.out, "output directory");
    gen->add_option("--tokens", gd.tokens, "corpus length in tokens");
    gen->add_option("--seed", gd.cc.seed, "corpus seed");
    gen->add_option("--vocab", gd.cc.vocab_size, "vocabulary size");
    gen->add_option("--active", gd.cc.active_tokens, "active chain alphabet");
    gen->add_option("--support", gd.cc.support, "successors per context");
    gen->add_option("--template-rate", gd.cc.template_rate, "key template rate per chunk");
    gen->add_option("--chunk-len", gd.cc.chunk_len, "chunk length");
    gen->add_option("--key-alphabet", gd.cc.key_alphabet, "key token alphabet");
    gen->add_option("--gap-min", gd.cc.gap_min, "min gap between key copies");
    gen->add_option("--gap-max", gd.cc.gap_max, "max gap between key copies");
    gen->add_flag("--sequential-keys", gd.cc.sequential_keys,
                  "keys step by +1 mod alphabet from a random start");
    gen->add_flag("--force", gd.force, "overwrite an existing corpus");

    TrainBaseArgs tba;
    auto * tb = app.add_subcommand("train-base", "train the base transformer");
    tb->add_option("--data", tba.data, "corpus directory");
    tb->add_option("--out", tba.out, "output directory");
    tb->add_option("--layers", tba.mc.n_layers, "transformer layers");
    tb->add_option("--d-model", tba.mc.d_model, "model width");
    tb->add_option("--heads", tba.mc.n_heads, "attention heads");
    tb->add_option("--vocab", tba.mc.vocab_size, "vocabulary size");
    tb->add_option("--max-seq", tba.mc.max_seq_len, "max sequence length");
    tb->add_option("--model-seed", tba.mc.seed, "init seed");
    tb->add_option("--steps", tba.tc.steps, "training steps");
    tb->add_option("--batch", tba.tc.batch_size, "sequences per step");
    tb->add_option("--ctx", tba.tc.context_len, "training context length");
    tb->add_option("--lr", tba.tc.peak_lr, "peak learning rate");
    tb->add_option("--min-lr", tba.tc.min_lr, "final learning rate");
    tb->add_option("--seed", tba.tc.seed, "training seed");

    IdentifyArgs ida;
    auto * id = app.add_subcommand("identify", "find redundant attention layers");
    id->add_option("--base", ida.base, "base checkpoint");
    id->add_option("--data", ida.data, "corpus directory");
    id->add_option("--out", ida.out, "output directory");
    id->add_option("--k", ida.k, "layers to skip (cardinality constraint)");
    id->add_option("--iterations", ida.iterations, "optimization budget");
    id->add_option("--prompts", ida.prompts, "prompts per objective evaluation");
    id->add_option("--prompt-len", ida.prompt_len, "prompt length");
    id->add_option("--new-tokens", ida.new_tokens, "tokens generated per prompt");
    id->add_option("--spec-k", ida.spec_k, "draft length K");
    id->add_option("--seed", ida.seed, "search seed");
    id->add_flag("--worse", ida.also_worse, "also run the reverse (minimize) search");
    id->add_option("--warm-start", ida.warm_start_csv, "history CSV to preload");
    id->add_flag("--sample", ida.sample_mode, "sample mode instead of greedy");
    id->add_flag("--wall-clock", ida.wall_clock, "measure wall-clock cost instead of FLOPs");

    BuildArgs ba;
    auto * bd = app.add_subcommand("build-hybrid", "replace skipped layers with SSM blocks");
    bd->add_option("--base", ba.base, "base checkpoint");
    bd->add_option("--skip", ba.skip, "bitstring or .skip file")->required();
    bd->add_option("--kind", ba.kind, "ssm kind: longhorn | mamba2");
    bd->add_option("--out", ba.out, "hybrid checkpoint path");
    bd->add_option("--seed", ba.seed, "block init seed");
    bd->add_flag("--no-zero-init", ba.no_zero_init, "ablation: random gate-branch init");
    bd->add_option("--verify-prompts", ba.verify_prompts, "prompts for the equivalence check");

    DistillArgs da;
    auto * ds = app.add_subcommand("distill", "forward-KL distillation");
    ds->add_option("--hybrid", da.hybrid, "hybrid checkpoint");
    ds->add_option("--teacher", da.teacher, "teacher checkpoint");
    ds->add_option("--data", da.data, "corpus directory");
    ds->add_option("--out", da.out, "output directory");
    ds->add_option("--mode", da.mode, "self | standard");
    ds->add_option("--steps", da.dc.steps, "training steps");
    ds->add_option("--batch", da.dc.batch_size, "sequences per step");
    ds->add_option("--ctx", da.dc.context_len, "context length");
    ds->add_option("--lr", da.dc.peak_lr, "peak learning rate");
    ds->add_option("--min-lr", da.dc.min_lr, "final learning rate");
    ds->add_option("--mamba2-lr", da.dc.mamba2_peak_lr, "peak lr override for mamba2 students");
    ds->add_option("--mamba2-min-lr", da.dc.mamba2_min_lr, "min lr override for mamba2 students");
    ds->add_option("--seed", da.dc.seed, "batch seed");
    ds->add_option("--eval-every", da.dc.eval_every, "held-out eval cadence (0 = off)");
    ds->add_option("--checkpoint-every", da.dc.checkpoint_every, "periodic checkpoint cadence");
    ds->add_option("--start-step", da.dc.start_step, "resume from this step");

    EvalArgs ea;
    auto * ev = app.add_subcommand("eval", "evaluation probes");
    ev->add_option("--model", ea.model, "model under evaluation")->required();
    ev->add_option("--teacher", ea.teacher, "teacher checkpoint");
    ev->add_option("--data", ea.data, "corpus directory");
    ev->add_option("--out", ea.out, "output directory");
    ev->add_option("--id", ea.id, "label used in the report");
    ev->add_option("--prompts", ea.prompts, "held-out prompts");
    ev->add_option("--prompt-len", ea.prompt_len, "prompt length");
    ev->add_option("--passkey-trials", ea.passkey_trials, "trials per depth");
    ev->add_option("--passkey-context", ea.passkey_context, "passkey context length");
    ev->add_option("--seed", ea.seed, "eval seed");

    ReportArgs ra;
    auto * rp = app.add_subcommand("report", "merge run artifacts into a summary table");
    rp->add_option("--trainlog", ra.trainlogs, "label=path of a distill train log");
    rp->add_option("--eval", ra.evals, "label=path of an eval report");
    rp->add_option("--out", ra.out, "summary CSV path");
    rp->add_option("--final-phase", ra.final_phase, "fraction of steps in the final phase");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gd);
        if (tb->parsed()) return cmd_train_base(tba);
        if (id->parsed()) return cmd_identify(ida);
        if (bd->parsed()) return cmd_build(ba);
        if (ds->parsed()) return cmd_distill(da);
        if (ev->parsed()) return cmd_eval(ea);
        if (rp->parsed()) return cmd_report(ra);
    } catch (const spd::numeric_error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const spd::io_error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const spd::input_error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const spd::config_error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const spd::error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
