#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsi/checkpoint.hpp"
#include "mmsi/corpus.hpp"
#include "mmsi/interpret.hpp"
#include "mmsi/preprocess.hpp"
#include "mmsi/train.hpp"

namespace mmsi {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Experiment configuration (file-first; the effective config is written back
// into every run directory).

struct ExperimentConfig {
    // task
    std::string task = "guilt_inference";  // guilt_inference | guilt_identification | prison | joint
    // corpus
    std::string corpus_path;               // empty => synthetic
    std::optional<SyntheticSpec> synthetic;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    // preprocess
    MaskStrategy strategy = MaskStrategy::mask;
    Construction construction = Construction::pairs;
    int max_len = 512;
    // ablation toggles: mask off forces the original strategy; fusion off
    // trains the regressor without label broadcasting.
    bool ablation_mask = true;
    bool ablation_fusion = true;
    // model / training
    EncoderConfig encoder;
    TrainConfig train;
    JointConfig joint;
    // protocol
    int n_resamples = 1;
    int n_repetitions = 1;
    std::uint64_t base_seed = 0;
    int jobs = 1;
    bool dump_predictions = true;
    // interpret
    std::vector<int> k_list{1, 2, 3, 4, 5};
    int ig_steps = 64;
    IgBaseline ig_baseline = IgBaseline::pad_embedding;
    // output
    std::string output_dir = "run";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
};

namespace cfgdetail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.n_cases = j.value("n_cases", s.n_cases);
    s.seed = j.value("seed", s.seed);
    s.role_mix_fraction = j.value("role_mix_fraction", s.role_mix_fraction);
    if (j.contains("defendants_per_case_weights"))
        s.defendants_per_case_weights =
            j["defendants_per_case_weights"].get<std::vector<double>>();
    s.prison_max = j.value("prison_max", s.prison_max);
    s.solo_sentence_prob = j.value("solo_sentence_prob", s.solo_sentence_prob);
    s.solo_verb_swap_prob = j.value("solo_verb_swap_prob", s.solo_verb_swap_prob);
    if (j.contains("severity_weights")) {
        auto w = j["severity_weights"].get<std::vector<double>>();
        if (w.size() != 4) throw std::runtime_error("severity_weights needs 4 entries");
        std::copy(w.begin(), w.end(), s.severity_weights.begin());
    }
    s.surrender_prob = j.value("surrender_prob", s.surrender_prob);
    s.confession_prob = j.value("confession_prob", s.confession_prob);
    if (j.contains("sentencing_rule")) {
        const auto& r = j["sentencing_rule"];
        if (r.contains("base_months")) {
            auto b = r["base_months"].get<std::vector<int>>();
            if (b.size() != 4) throw std::runtime_error("base_months needs 4 entries");
            std::copy(b.begin(), b.end(), s.sentencing_rule.base_months.begin());
        }
        s.sentencing_rule.accomplice_factor =
            r.value("accomplice_factor", s.sentencing_rule.accomplice_factor);
        s.sentencing_rule.surrender_discount =
            r.value("surrender_discount", s.sentencing_rule.surrender_discount);
        s.sentencing_rule.confession_discount =
            r.value("confession_discount", s.sentencing_rule.confession_discount);
        s.sentencing_rule.min_months = r.value("min_months", s.sentencing_rule.min_months);
    }
    return s;
}

inline nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
    nlohmann::json j;
    j["n_cases"] = s.n_cases;
    j["seed"] = s.seed;
    j["role_mix_fraction"] = s.role_mix_fraction;
    j["defendants_per_case_weights"] = s.defendants_per_case_weights;
    j["prison_max"] = s.prison_max;
    j["solo_sentence_prob"] = s.solo_sentence_prob;
    j["solo_verb_swap_prob"] = s.solo_verb_swap_prob;
    j["severity_weights"] = s.severity_weights;
    j["surrender_prob"] = s.surrender_prob;
    j["confession_prob"] = s.confession_prob;
    j["sentencing_rule"] = {{"base_months", s.sentencing_rule.base_months},
                            {"accomplice_factor", s.sentencing_rule.accomplice_factor},
                            {"surrender_discount", s.sentencing_rule.surrender_discount},
                            {"confession_discount", s.sentencing_rule.confession_discount},
                            {"min_months", s.sentencing_rule.min_months}};
    return j;
}

}  // namespace cfgdetail

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    if (!corpus_path.empty()) j["corpus"]["path"] = corpus_path;
    if (synthetic) j["corpus"]["synthetic"] = cfgdetail::synthetic_to_json(*synthetic);
    j["corpus"]["split_ratios"] = split_ratios;
    j["preprocess"] = {{"strategy", strategy_name(strategy)},
                       {"construction", construction_name(construction)},
                       {"max_len", max_len}};
    j["ablation"] = {{"mask", ablation_mask}, {"fusion", ablation_fusion}};
    j["encoder"] = encoder.to_json();
    j["train"] = {{"learning_rate", train.learning_rate}, {"batch_size", train.batch_size},
                  {"epochs", train.epochs},               {"dropout", train.dropout},
                  {"seed", train.seed},                   {"weight_decay", train.weight_decay},
                  {"clip_norm", train.clip_norm},
                  {"label_source", label_source_name(train.label_source)}};
    j["joint"] = {{"alpha", joint.alpha}, {"beta", joint.beta}};
    j["protocol"] = {{"n_resamples", n_resamples},
                     {"n_repetitions", n_repetitions},
                     {"base_seed", base_seed},
                     {"jobs", jobs},
                     {"dump_predictions", dump_predictions}};
    j["interpret"] = {{"k_list", k_list},
                      {"steps", ig_steps},
                      {"baseline", ig_baseline == IgBaseline::pad_embedding ? "pad_embedding"
                                                                            : "zero_embedding"}};
    j["output_dir"] = output_dir;
    return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.task = j.value("task", c.task);
    if (c.task != "guilt_inference" && c.task != "guilt_identification" && c.task != "prison" &&
        c.task != "joint")
        throw std::runtime_error("config key \"task\": unknown task \"" + c.task + "\"");
    if (j.contains("corpus")) {
        const auto& jc = j["corpus"];
        if (jc.contains("path")) c.corpus_path = jc["path"].get<std::string>();
        if (jc.contains("synthetic")) c.synthetic = cfgdetail::synthetic_from_json(jc["synthetic"]);
        if (jc.contains("split_ratios")) {
            auto r = jc["split_ratios"].get<std::vector<double>>();
            if (r.size() != 3)
                throw std::runtime_error("config key \"corpus.split_ratios\": needs 3 entries");
            std::copy(r.begin(), r.end(), c.split_ratios.begin());
        }
    }
    if (c.corpus_path.empty() && !c.synthetic)
        throw std::runtime_error("config key \"corpus\": needs either \"path\" or \"synthetic\"");
    if (j.contains("preprocess")) {
        const auto& jp = j["preprocess"];
        if (jp.contains("strategy")) c.strategy = strategy_from_name(jp["strategy"].get<std::string>());
        if (jp.contains("construction"))
            c.construction = construction_from_name(jp["construction"].get<std::string>());
        c.max_len = jp.value("max_len", c.max_len);
    }
    if (j.contains("ablation")) {
        c.ablation_mask = j["ablation"].value("mask", true);
        c.ablation_fusion = j["ablation"].value("fusion", true);
    }
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    c.encoder.max_len = std::max(c.encoder.max_len, c.max_len);
    if (j.contains("train")) {
        const auto& jt = j["train"];
        c.train.learning_rate = jt.value("learning_rate", c.train.learning_rate);
        c.train.batch_size = jt.value("batch_size", c.train.batch_size);
        c.train.epochs = jt.value("epochs", c.train.epochs);
        c.train.dropout = jt.value("dropout", c.train.dropout);
        c.train.seed = jt.value("seed", c.train.seed);
        c.train.weight_decay = jt.value("weight_decay", c.train.weight_decay);
        c.train.clip_norm = jt.value("clip_norm", c.train.clip_norm);
        const std::string src = jt.value("label_source", "ground_truth");
        if (src != "ground_truth" && src != "predicted")
            throw std::runtime_error("config key \"train.label_source\": unknown value \"" + src + "\"");
        c.train.label_source =
            src == "predicted" ? LabelSource::predicted : LabelSource::ground_truth;
        c.train.validate();
    }
    if (j.contains("joint")) {
        c.joint.alpha = j["joint"].value("alpha", c.joint.alpha);
        c.joint.beta = j["joint"].value("beta", c.joint.beta);
        c.joint.validate();
    }
    if (j.contains("protocol")) {
        const auto& jp = j["protocol"];
        c.n_resamples = jp.value("n_resamples", c.n_resamples);
        c.n_repetitions = jp.value("n_repetitions", c.n_repetitions);
        c.base_seed = jp.value("base_seed", c.base_seed);
        c.jobs = jp.value("jobs", c.jobs);
        c.dump_predictions = jp.value("dump_predictions", c.dump_predictions);
        if (c.n_resamples < 1 || c.n_repetitions < 1)
            throw std::runtime_error("config key \"protocol\": counts must be at least 1");
    }
    if (j.contains("interpret")) {
        const auto& ji = j["interpret"];
        if (ji.contains("k_list")) c.k_list = ji["k_list"].get<std::vector<int>>();
        c.ig_steps = ji.value("steps", c.ig_steps);
        const std::string b = ji.value("baseline", "pad_embedding");
        if (b != "pad_embedding" && b != "zero_embedding")
            throw std::runtime_error("config key \"interpret.baseline\": unknown value \"" + b + "\"");
        c.ig_baseline = b == "zero_embedding" ? IgBaseline::zero_embedding : IgBaseline::pad_embedding;
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ":" +
                                 std::to_string(cfgdetail::line_of_offset(text, e.byte)) +
                                 ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Run directory helpers

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out << text;
}

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_predictions(const std::vector<PredictionRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write predictions file: " + path.string());
    for (const auto& r : rows) {
        nlohmann::json j;
        j["case_id"] = r.case_id;
        j["defendant"] = r.defendant;
        j["guilt_pred"] = r.guilt_pred;
        j["p"] = r.p;
        j["months_pred"] = r.months_pred;
        j["months_true"] = r.months_true;
        out << j.dump() << "\n";
    }
}

inline std::vector<PredictionRow> read_predictions(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open predictions file: " + path.string());
    std::vector<PredictionRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " +
                                     e.what());
        }
        PredictionRow r;
        r.case_id = j.value("case_id", "");
        r.defendant = j.value("defendant", "");
        r.guilt_pred = j.value("guilt_pred", 0);
        r.p = j.value("p", 0.0);
        r.months_pred = j.value("months_pred", 0.0);
        r.months_true = j.value("months_true", 0.0);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline nlohmann::json report_to_json(const AggregateReport& report) {
    nlohmann::json j;
    j["protocol"] = {{"n_resamples", report.n_resamples},
                     {"n_repetitions", report.n_repetitions},
                     {"n_runs", report.n_resamples * report.n_repetitions}};
    j["repetition_policy"] = report.repetition_policy;
    nlohmann::json metrics;
    for (const auto& [name, s] : report.metrics) {
        nlohmann::json m;
        m["mean"] = s.mean;
        if (s.ci_defined)
            m["ci95_halfwidth"] = s.ci_halfwidth;
        else
            m["ci95_halfwidth"] = "n/a";
        m["n_runs"] = s.n_runs;
        metrics[name] = m;
    }
    j["metrics"] = metrics;
    return j;
}

// ---------------------------------------------------------------------------
// Protocol task adapter: one (split seed, train seed) run of the configured
// task, returning metrics under their report names.

struct RunArtifacts {
    std::map<std::string, double> metrics;
    std::vector<PredictionRow> predictions;
};

inline SampleSet build_task_set(const CaseCorpus& part, Task task, const ExperimentConfig& cfg,
                                const CharTokenizer& tok, std::uint64_t pair_seed) {
    const MaskStrategy strategy = cfg.ablation_mask ? cfg.strategy : MaskStrategy::original;
    const auto samples = derive_samples(part, task);
    return build_pairs_dataset(samples, cfg.construction, pair_seed, strategy, tok, cfg.max_len);
}

inline void audit_split_isolation(const CorpusSplits& splits) {
    std::set<std::string> train_ids, val_ids;
    for (const auto& c : splits.train.cases) train_ids.insert(c.id);
    for (const auto& c : splits.val.cases) {
        if (train_ids.count(c.id)) throw std::runtime_error("split leak: case in train and val");
        val_ids.insert(c.id);
    }
    for (const auto& c : splits.test.cases)
        if (train_ids.count(c.id) || val_ids.count(c.id))
            throw std::runtime_error("split leak: test case appears in another split");
}

inline RunArtifacts run_protocol_task(const CaseCorpus& corpus, const ExperimentConfig& cfg,
                                      const CharTokenizer& tok, std::uint64_t split_seed,
                                      std::uint64_t train_seed) {
    const Task task = cfg.task == "prison" || cfg.task == "joint" ? Task::prison
                                                                  : task_from_name(cfg.task);
    CorpusSplits splits = split_corpus(corpus, cfg.split_ratios, split_seed);
    audit_split_isolation(splits);

    const std::uint64_t pair_seed = hash_combine(split_seed, "pairing");
    SampleSet train_set = build_task_set(splits.train, task, cfg, tok, pair_seed);
    SampleSet val_set =
        build_task_set(splits.val, task, cfg, tok, hash_combine(pair_seed, "val"));
    SampleSet test_set =
        build_task_set(splits.test, task, cfg, tok, hash_combine(pair_seed, "test"));

    TrainConfig tc = cfg.train;
    tc.seed = train_seed;

    RunArtifacts out;
    if (cfg.task == "guilt_inference" || cfg.task == "guilt_identification") {
        const TextSource source =
            cfg.task == "guilt_inference" ? TextSource::fd : TextSource::cv;
        auto [model, history] =
            train_classifier(train_set, val_set, tc, cfg.encoder, tok.vocab_size(), source);
        const ClassificationMetrics m = evaluate_classifier(*model, test_set, &out.predictions);
        out.metrics = {{"Acc", m.acc}, {"P", m.precision}, {"R", m.recall}, {"F1", m.f1}};
    } else if (cfg.task == "prison") {
        const FusionMode fusion =
            cfg.ablation_fusion ? FusionMode::broadcast : FusionMode::none;
        std::unique_ptr<GuiltClassifier> classifier;
        if (tc.label_source == LabelSource::predicted && fusion == FusionMode::broadcast) {
            // Stage 1 trains on the same split with the fd views of the samples.
            SampleSet fd_train = train_set, fd_val = val_set;
            for (auto& s : fd_train.samples) s.tokens = *s.fd_tokens;
            for (auto& s : fd_val.samples) s.tokens = *s.fd_tokens;
            for (auto& s : fd_train.samples) s.source = TextSource::fd;
            for (auto& s : fd_val.samples) s.source = TextSource::fd;
            TrainConfig stage1 = tc;
            stage1.seed = hash_combine(tc.seed, "stage1");
            auto [clf, h] = train_classifier(fd_train, fd_val, stage1, cfg.encoder,
                                             tok.vocab_size(), TextSource::fd);
            classifier = std::move(clf);
        }
        auto [model, history] =
            train_regressor(train_set, val_set, tc, cfg.encoder, tok.vocab_size(), fusion,
                            corpus.prison_max, classifier.get());
        const RegressionMetrics m =
            evaluate_regressor(*model, test_set, tc.label_source, classifier.get(), &out.predictions);
        out.metrics = {{"ImpScore", m.imp_score}, {"ImpAcc", m.imp_acc}, {"ImpErr", m.imp_err}};
    } else {  // joint
        auto [model, history] = train_joint(train_set, val_set, tc, cfg.encoder,
                                            tok.vocab_size(), cfg.joint, corpus.prison_max);
        const JointEval e = evaluate_joint(*model, test_set, &out.predictions);
        out.metrics = {{"Acc", e.classification.acc},
                       {"P", e.classification.precision},
                       {"R", e.classification.recall},
                       {"F1", e.classification.f1},
                       {"ImpScore", e.regression.imp_score},
                       {"ImpAcc", e.regression.imp_acc},
                       {"ImpErr", e.regression.imp_err}};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus acquisition shared by the commands.

inline CaseCorpus obtain_corpus(const ExperimentConfig& cfg) {
    CaseCorpus corpus;
    if (!cfg.corpus_path.empty())
        corpus = load_corpus(cfg.corpus_path);
    else
        corpus = generate_synthetic_corpus(*cfg.synthetic);
    if (cfg.task == "prison" || cfg.task == "joint")
        prune_corpus(corpus, default_role_keywords());
    return corpus;
}

// ---------------------------------------------------------------------------
// Commands. Each returns 0 on success and writes into the run directory.

inline int cmd_generate(const ExperimentConfig& cfg) {
    if (!cfg.synthetic)
        throw std::runtime_error("generate needs a corpus.synthetic section");
    fs::create_directories(cfg.output_dir);
    const CaseCorpus corpus = generate_synthetic_corpus(*cfg.synthetic);
    save_corpus(corpus, (fs::path(cfg.output_dir) / "corpus.jsonl").string());
    write_text_file(fs::path(cfg.output_dir) / "config.json", cfg.to_json().dump(2) + "\n");
    return 0;
}

inline int cmd_preprocess(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    CaseCorpus corpus = obtain_corpus(cfg);
    const CharTokenizer tok = CharTokenizer::from_corpus(corpus);
    const Task task = cfg.task == "joint" ? Task::prison : task_from_name(cfg.task);
    const MaskStrategy strategy = cfg.ablation_mask ? cfg.strategy : MaskStrategy::original;
    const auto samples = derive_samples(corpus, task);
    const SampleSet set = build_pairs_dataset(samples, cfg.construction,
                                              hash_combine(cfg.base_seed, "pairing"), strategy,
                                              tok, cfg.max_len);
    save_sample_set(set, (fs::path(cfg.output_dir) / "samples.jsonl").string());
    tok.save((fs::path(cfg.output_dir) / "vocab.txt").string());
    write_text_file(fs::path(cfg.output_dir) / "config.json", cfg.to_json().dump(2) + "\n");
    return 0;
}

// Single training run (resample 0, repetition 0 seeds); resumable: an
// existing checkpoint is kept as-is.
inline int cmd_train(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    const fs::path ckpt = fs::path(cfg.output_dir) / "model.ckpt";
    write_text_file(fs::path(cfg.output_dir) / "config.json", cfg.to_json().dump(2) + "\n");
    if (fs::exists(ckpt)) return 0;

    CaseCorpus corpus = obtain_corpus(cfg);
    const CharTokenizer tok = CharTokenizer::from_corpus(corpus);
    tok.save((fs::path(cfg.output_dir) / "vocab.txt").string());

    const std::uint64_t split_seed =
        hash_combine(hash_combine(cfg.base_seed, "resample"), std::uint64_t{0});
    const std::uint64_t train_seed =
        hash_combine(hash_combine(split_seed, "repetition"), std::uint64_t{0});
    CorpusSplits splits = split_corpus(corpus, cfg.split_ratios, split_seed);
    audit_split_isolation(splits);
    const Task task = cfg.task == "prison" || cfg.task == "joint" ? Task::prison
                                                                  : task_from_name(cfg.task);
    const std::uint64_t pair_seed = hash_combine(split_seed, "pairing");
    SampleSet train_set = build_task_set(splits.train, task, cfg, tok, pair_seed);
    SampleSet val_set = build_task_set(splits.val, task, cfg, tok, hash_combine(pair_seed, "val"));

    TrainConfig tc = cfg.train;
    tc.seed = train_seed;

    nlohmann::json hist_json;
    if (cfg.task == "guilt_inference" || cfg.task == "guilt_identification") {
        const TextSource source = cfg.task == "guilt_inference" ? TextSource::fd : TextSource::cv;
        auto [model, history] =
            train_classifier(train_set, val_set, tc, cfg.encoder, tok.vocab_size(), source);
        save_classifier(*model, ckpt.string());
        hist_json["selection_metric"] = history.selection_metric;
        hist_json["best_epoch"] = history.best_epoch;
        for (const auto& e : history.epochs)
            hist_json["epochs"].push_back({{"epoch", e.epoch},
                                           {"train_loss", e.train_loss},
                                           {"grad_norm_mean", e.grad_norm_mean},
                                           {"val", e.val_metrics}});
    } else if (cfg.task == "prison") {
        const FusionMode fusion = cfg.ablation_fusion ? FusionMode::broadcast : FusionMode::none;
        auto [model, history] = train_regressor(train_set, val_set, tc, cfg.encoder,
                                                tok.vocab_size(), fusion, corpus.prison_max);
        save_regressor(*model, ckpt.string());
        hist_json["selection_metric"] = history.selection_metric;
        hist_json["best_epoch"] = history.best_epoch;
        for (const auto& e : history.epochs)
            hist_json["epochs"].push_back({{"epoch", e.epoch},
                                           {"train_loss", e.train_loss},
                                           {"grad_norm_mean", e.grad_norm_mean},
                                           {"val", e.val_metrics}});
    } else {
        auto [model, history] = train_joint(train_set, val_set, tc, cfg.encoder, tok.vocab_size(),
                                            cfg.joint, corpus.prison_max);
        save_joint(*model, ckpt.string());
        hist_json["selection_metric"] = history.selection_metric;
        hist_json["best_epoch"] = history.best_epoch;
        for (const auto& e : history.epochs)
            hist_json["epochs"].push_back({{"epoch", e.epoch},
                                           {"train_loss", e.train_loss},
                                           {"grad_norm_mean", e.grad_norm_mean},
                                           {"val", e.val_metrics}});
    }
    write_text_file(fs::path(cfg.output_dir) / "history.json", hist_json.dump(2) + "\n");
    return 0;
}

// Full resampling x repetition protocol with run-level resume; also accepts a
// predictions file for direct scoring.
inline int cmd_evaluate(const ExperimentConfig& cfg,
                        const std::string& predictions_path = std::string(),
                        int prison_max_for_predictions = 180) {
    fs::create_directories(cfg.output_dir);
    write_text_file(fs::path(cfg.output_dir) / "config.json", cfg.to_json().dump(2) + "\n");

    if (!predictions_path.empty()) {
        const auto rows = read_predictions(predictions_path);
        if (rows.empty()) throw std::runtime_error("predictions file is empty");
        std::vector<double> preds, truths;
        for (const auto& r : rows) {
            preds.push_back(r.months_pred);
            truths.push_back(r.months_true);
        }
        const RegressionMetrics m =
            regression_metrics(preds, truths, static_cast<double>(prison_max_for_predictions));
        nlohmann::json j;
        j["metrics"] = {{"ImpScore", {{"mean", m.imp_score}, {"ci95_halfwidth", "n/a"}, {"n_runs", 1}}},
                        {"ImpAcc", {{"mean", m.imp_acc}, {"ci95_halfwidth", "n/a"}, {"n_runs", 1}}},
                        {"ImpErr", {{"mean", m.imp_err}, {"ci95_halfwidth", "n/a"}, {"n_runs", 1}}}};
        j["source"] = "predictions_file";
        write_text_file(fs::path(cfg.output_dir) / "report.json", j.dump(2) + "\n");
        return 0;
    }

    CaseCorpus corpus = obtain_corpus(cfg);
    const CharTokenizer tok = CharTokenizer::from_corpus(corpus);
    tok.save((fs::path(cfg.output_dir) / "vocab.txt").string());
    const fs::path runs_dir = fs::path(cfg.output_dir) / "runs";
    fs::create_directories(runs_dir);

    auto run_fn = [&](int r, int j, std::uint64_t split_seed,
                      std::uint64_t train_seed) -> std::map<std::string, double> {
        const fs::path run_file =
            runs_dir / ("run_r" + std::to_string(r) + "_j" + std::to_string(j) + ".json");
        if (fs::exists(run_file)) {
            const nlohmann::json j2 = nlohmann::json::parse(read_text_file(run_file));
            std::map<std::string, double> m;
            for (const auto& [k, v] : j2["metrics"].items()) m[k] = v.get<double>();
            return m;
        }
        RunArtifacts artifacts = run_protocol_task(corpus, cfg, tok, split_seed, train_seed);
        nlohmann::json j2;
        j2["resample"] = r;
        j2["repetition"] = j;
        j2["split_seed"] = split_seed;
        j2["train_seed"] = train_seed;
        j2["metrics"] = artifacts.metrics;
        write_text_file(run_file, j2.dump(2) + "\n");
        if (cfg.dump_predictions)
            write_predictions(artifacts.predictions,
                              runs_dir / ("predictions_r" + std::to_string(r) + "_j" +
                                          std::to_string(j) + ".jsonl"));
        return artifacts.metrics;
    };

    const AggregateReport report =
        run_protocol(cfg.n_resamples, cfg.n_repetitions, cfg.base_seed, run_fn, cfg.jobs);

    std::ostringstream seeds;
    for (std::size_t i = 0; i < report.seeds.size(); ++i) {
        nlohmann::json j;
        j["run"] = i;
        j["split_seed"] = report.seeds[i].first;
        j["train_seed"] = report.seeds[i].second;
        seeds << j.dump() << "\n";
    }
    write_text_file(fs::path(cfg.output_dir) / "seeds.jsonl", seeds.str());
    write_text_file(fs::path(cfg.output_dir) / "report.json",
                    report_to_json(report).dump(2) + "\n");
    return 0;
}

// Attribution artifacts from the resample-0 test split and a trained model.
inline int cmd_attribute(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    fs::create_directories(cfg.output_dir);
    write_text_file(fs::path(cfg.output_dir) / "config.json", cfg.to_json().dump(2) + "\n");
    CaseCorpus corpus = obtain_corpus(cfg);
    const CharTokenizer tok = CharTokenizer::from_corpus(corpus);

    const std::uint64_t split_seed =
        hash_combine(hash_combine(cfg.base_seed, "resample"), std::uint64_t{0});
    CorpusSplits splits = split_corpus(corpus, cfg.split_ratios, split_seed);
    const Task task = cfg.task == "prison" || cfg.task == "joint" ? Task::prison
                                                                  : task_from_name(cfg.task);
    const SampleSet test_set = build_task_set(
        splits.test, task, cfg, tok, hash_combine(hash_combine(split_seed, "pairing"), "test"));

    std::vector<TokenAttribution> attrs;
    nlohmann::json comp_json;
    std::ofstream attr_out(fs::path(cfg.output_dir) / "attributions.jsonl", std::ios::binary);

    if (cfg.task == "prison") {
        auto model = load_regressor(checkpoint_path);
        for (const auto& s : test_set.samples) {
            RegressorAttribution target(*model, s.role == Role::principal ? 1.0 : 0.0);
            TokenAttribution a = integrated_gradients(target, s.tokens, cfg.ig_steps, cfg.ig_baseline);
            for (std::size_t i = 0; i < a.tokens.size(); ++i) {
                nlohmann::json j;
                j["case_id"] = s.case_id;
                j["defendant"] = s.target_name;
                j["token"] = a.tokens[i];
                j["score"] = a.scores[i];
                attr_out << j.dump() << "\n";
            }
            attrs.push_back(std::move(a));
        }
        for (int k : cfg.k_list) {
            CompOptions opt;
            opt.steps = cfg.ig_steps;
            opt.baseline = cfg.ig_baseline;
            const CompReport r = comprehensiveness_regression(*model, test_set, k, opt);
            nlohmann::json j;
            j["k"] = k;
            for (const auto& [name, v] : r.comp_metric) j["COMP_" + name] = v;
            comp_json.push_back(j);
        }
        // Attention export for the first sample, final layer.
        if (!test_set.samples.empty()) {
            const auto& s0 = test_set.samples.front();
            const EncoderOutput eo = model->encoder().encode(s0.tokens);
            std::ostringstream attn;
            for (const auto& e :
                 export_attention(eo, s0.tokens, model->encoder().config().layers - 1)) {
                nlohmann::json j;
                j["position"] = e.position;
                j["token"] = e.token;
                j["weight"] = e.weight;
                attn << j.dump() << "\n";
            }
            write_text_file(fs::path(cfg.output_dir) / "attention.jsonl", attn.str());
        }
    } else {
        auto model = load_classifier(checkpoint_path);
        for (const auto& s : test_set.samples) {
            const int predicted = make_guilt_prediction(model->probability(s.tokens)).label;
            ClassifierAttribution target(*model, predicted);
            TokenAttribution a = integrated_gradients(target, s.tokens, cfg.ig_steps, cfg.ig_baseline);
            for (std::size_t i = 0; i < a.tokens.size(); ++i) {
                nlohmann::json j;
                j["case_id"] = s.case_id;
                j["defendant"] = s.target_name;
                j["token"] = a.tokens[i];
                j["score"] = a.scores[i];
                attr_out << j.dump() << "\n";
            }
            attrs.push_back(std::move(a));
        }
        for (int k : cfg.k_list) {
            CompOptions opt;
            opt.steps = cfg.ig_steps;
            opt.baseline = cfg.ig_baseline;
            const CompReport r = comprehensiveness_classification(*model, test_set, k, opt);
            comp_json.push_back({{"k", k}, {"COMP_p", *r.comp_p}});
        }
        if (!test_set.samples.empty()) {
            const auto& s0 = test_set.samples.front();
            const EncoderOutput eo = model->encoder().encode(s0.tokens);
            std::ostringstream attn;
            for (const auto& e :
                 export_attention(eo, s0.tokens, model->encoder().config().layers - 1)) {
                nlohmann::json j;
                j["position"] = e.position;
                j["token"] = e.token;
                j["weight"] = e.weight;
                attn << j.dump() << "\n";
            }
            write_text_file(fs::path(cfg.output_dir) / "attention.jsonl", attn.str());
        }
    }
    write_text_file(fs::path(cfg.output_dir) / "comp.json", comp_json.dump(2) + "\n");

    std::ostringstream freq;
    const int k_freq = cfg.k_list.empty() ? 5 : cfg.k_list.back();
    for (const auto& [token, count] : aggregate_token_frequencies(attrs, k_freq)) {
        nlohmann::json j;
        j["token"] = token;
        j["count"] = count;
        freq << j.dump() << "\n";
    }
    write_text_file(fs::path(cfg.output_dir) / "frequencies.jsonl", freq.str());
    return 0;
}

// Grid sweep; each grid point becomes its own run directory under output_dir.
inline int cmd_sweep(const ExperimentConfig& base, const nlohmann::json& sweep_spec) {
    fs::create_directories(base.output_dir);
    std::vector<std::pair<std::string, ExperimentConfig>> grid;

    if (sweep_spec.contains("alpha_beta") || sweep_spec.value("preset", "") == "alpha_beta") {
        std::vector<std::pair<double, double>> points;
        if (sweep_spec.contains("alpha_beta")) {
            for (const auto& p : sweep_spec["alpha_beta"])
                points.emplace_back(p[0].get<double>(), p[1].get<double>());
        } else {
            points = {{0.00, 1.00}, {0.01, 1.00}, {0.05, 1.00}, {0.10, 1.00}, {0.20, 1.00},
                      {0.40, 1.00}, {0.60, 1.00}, {0.80, 1.00}, {1.00, 1.00}, {1.00, 0.80},
                      {1.00, 0.60}, {1.00, 0.40}, {1.00, 0.20}, {1.00, 0.10}, {1.00, 0.05},
                      {1.00, 0.01}, {1.00, 0.00}};
        }
        for (const auto& [a, b] : points) {
            ExperimentConfig c = base;
            c.task = "joint";
            c.joint.alpha = a;
            c.joint.beta = b;
            std::ostringstream name;
            name << "alpha_" << a << "_beta_" << b;
            grid.emplace_back(name.str(), c);
        }
    } else {
        const std::vector<int> epochs = sweep_spec.contains("epochs")
                                            ? sweep_spec["epochs"].get<std::vector<int>>()
                                            : std::vector<int>{base.train.epochs};
        const std::vector<double> lrs =
            sweep_spec.contains("learning_rate")
                ? sweep_spec["learning_rate"].get<std::vector<double>>()
                : std::vector<double>{base.train.learning_rate};
        const std::vector<double> dropouts =
            sweep_spec.contains("dropout") ? sweep_spec["dropout"].get<std::vector<double>>()
                                           : std::vector<double>{base.train.dropout};
        for (int e : epochs)
            for (double lr : lrs)
                for (double dr : dropouts) {
                    ExperimentConfig c = base;
                    c.train.epochs = e;
                    c.train.learning_rate = lr;
                    c.train.dropout = dr;
                    std::ostringstream name;
                    name << "epochs_" << e << "_lr_" << lr << "_dropout_" << dr;
                    grid.emplace_back(name.str(), c);
                }
    }

    for (auto& [name, c] : grid) {
        c.output_dir = (fs::path(base.output_dir) / name).string();
        cmd_evaluate(c);
    }
    nlohmann::json index;
    for (const auto& [name, c] : grid) index.push_back(name);
    write_text_file(fs::path(base.output_dir) / "sweep_index.json", index.dump(2) + "\n");
    return 0;
}

// Consolidates reports from earlier commands; emits a metrics table and
// true-vs-predicted scatter data per role.
inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    fs::create_directories(out_dir);
    nlohmann::json table;
    std::ostringstream scatter;
    for (const auto& dir : run_dirs) {
        const fs::path report_path = fs::path(dir) / "report.json";
        if (!fs::exists(report_path))
            throw std::runtime_error("no report.json in run directory: " + dir);
        nlohmann::json row;
        row["run_dir"] = dir;
        row["report"] = nlohmann::json::parse(read_text_file(report_path));
        table.push_back(row);

        const fs::path runs_dir = fs::path(dir) / "runs";
        if (fs::exists(runs_dir)) {
            for (const auto& entry : fs::directory_iterator(runs_dir)) {
                const std::string fname = entry.path().filename().string();
                if (fname.rfind("predictions_", 0) != 0) continue;
                for (const auto& r : read_predictions(entry.path())) {
                    nlohmann::json j;
                    j["run_dir"] = dir;
                    j["months_true"] = r.months_true;
                    j["months_pred"] = r.months_pred;
                    j["role"] = r.guilt_pred;  // predicted role for coloring
                    scatter << j.dump() << "\n";
                }
            }
        }
    }
    write_text_file(fs::path(out_dir) / "consolidated.json", table.dump(2) + "\n");
    write_text_file(fs::path(out_dir) / "scatter.jsonl", scatter.str());
    return 0;
}

}  // namespace mmsi
