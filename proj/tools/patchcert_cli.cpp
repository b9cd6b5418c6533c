// patchcert: train, certify, attack and benchmark region-scoring classifiers.
//
//   patchcert train   --out runs/a --set train.epochs=5
//   patchcert certify --out runs/a --set certify.patches=2x2,3x3,5x5
//   patchcert attack  --out runs/a
//   patchcert bench   --out runs/b --set bench.reps=3
//
// Exit codes: 0 ok, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "patchcert/patchcert.hpp"

#ifndef PATCHCERT_VERSION
#define PATCHCERT_VERSION "unknown"
#endif

namespace pc = patchcert;
namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::json;

namespace {

constexpr int manifest_format_version = 1;
constexpr int csv_schema_version = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct KeyInfo {
    const char* key;
    const char* fallback;
};

// Every accepted key with its default. Anything else in a file or --set is rejected.
const KeyInfo known_keys[] = {
    {"run.seed", "0"},
    {"data.source", "synthetic"},
    {"data.path", ""},
    {"data.test_path", ""},
    {"data.n_per_class", "300"},
    {"data.size", "16"},
    {"data.height", "32"},
    {"data.width", "32"},
    {"data.channels", "3"},
    {"data.classes", "10"},
    {"data.split", "holdout"},
    {"data.limit", "-1"},
    {"model.rf", "5"},
    {"model.width", "32"},
    {"model.head", "heaviside_st"},
    {"train.margin", "0.5"},
    {"train.one_hot", "0"},
    {"train.lr", "0.001"},
    {"train.batch", "32"},
    {"train.epochs", "30"},
    {"train.warmup", "3"},
    {"train.flip", "true"},
    {"train.crop", "true"},
    {"train.crop_padding", "2"},
    {"train.holdout", "0.1"},
    {"train.eval_patch", "3x3"},
    {"certify.checkpoint", ""},
    {"certify.patches", "3x3"},
    {"certify.condition", "all"},
    {"attack.checkpoint", ""},
    {"attack.patch", "3x3"},
    {"attack.steps", "100"},
    {"attack.step_size", "0.025"},
    {"attack.margin", "1.0"},
    {"bench.blob", ""},
    {"bench.maps", "10000"},
    {"bench.rows", "32"},
    {"bench.cols", "32"},
    {"bench.classes", "10"},
    {"bench.patch", "5x5"},
    {"bench.rf", "5"},
    {"bench.reps", "3"},
};

class Config {
public:
    Config() {
        for (const auto& k : known_keys) values_[k.key] = k.fallback;
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    void load_ini(const fs::path& path) {
        if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
        pt::ptree tree;
        try {
            pt::read_ini(path.string(), tree);
        } catch (const pt::ini_parser_error& e) {
            throw ConfigError(std::string("config file: ") + e.what());
        }
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
            for (const auto& [key, value] : body) set(section + "." + key, value.data());
        }
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }

    long integer(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            const long out = std::stol(v, &used);
            if (used == v.size()) return out;
        } catch (const std::exception&) {
        }
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }

    double real(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used == v.size()) return out;
        } catch (const std::exception&) {
        }
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }

    bool boolean(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
    }

    std::string to_ini() const {
        std::ostringstream out;
        std::string section;
        for (const auto& [key, value] : values_) {
            const auto dot = key.find('.');
            if (key.substr(0, dot) != section) {
                section = key.substr(0, dot);
                out << (out.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
            }
            out << key.substr(dot + 1) << " = " << value << '\n';
        }
        return out.str();
    }

    json to_json() const {
        json j = json::object();
        for (const auto& [key, value] : values_) {
            const auto dot = key.find('.');
            j[key.substr(0, dot)][key.substr(dot + 1)] = value;
        }
        return j;
    }

private:
    std::map<std::string, std::string> values_;
};

struct CommonArgs {
    std::string config_path;
    std::string out = "patchcert_out";
    std::optional<long> seed;
    std::vector<std::string> overrides;
};

Config resolve(const CommonArgs& args) {
    Config cfg;
    if (!args.config_path.empty()) cfg.load_ini(args.config_path);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed) cfg.set("run.seed", std::to_string(*args.seed));
    return cfg;
}

std::pair<int, int> parse_patch(const std::string& s, const std::string& key) {
    int h = 0;
    int w = 0;
    char x = 0;
    std::istringstream in(s);
    if (!(in >> h >> x >> w) || x != 'x' || !in.eof() || h < 1 || w < 1) {
        throw ConfigError("config key '" + key + "': patch '" + s + "' must look like HxW");
    }
    return {h, w};
}

std::vector<std::pair<int, int>> parse_patch_list(const std::string& s, const std::string& key) {
    std::vector<std::pair<int, int>> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(parse_patch(item, key));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' lists no patches");
    return out;
}

pc::Activation head_of(const Config& cfg) {
    try {
        return pc::activation_from_string(cfg.str("model.head"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

std::uint64_t seed_of(const Config& cfg) {
    const long s = cfg.integer("run.seed");
    if (s < 0) throw ConfigError("run.seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

struct Splits {
    pc::Dataset train;
    pc::Dataset test;
};

Splits load_data(const Config& cfg) {
    const auto source = cfg.str("data.source");
    Splits out;
    if (source == "synthetic") {
        const long n = cfg.integer("data.n_per_class");
        const long size = cfg.integer("data.size");
        if (n < 1) throw ConfigError("data.n_per_class must be >= 1");
        if (size < 8) throw ConfigError("data.size must be >= 8");
        const auto seed = static_cast<std::uint64_t>(cfg.integer("run.seed"));
        out.train = pc::synth_textures(static_cast<int>(n), static_cast<int>(size), static_cast<int>(size), seed);
        out.test = pc::synth_textures(static_cast<int>(n), static_cast<int>(size), static_cast<int>(size),
                                      seed + 0x7e57);
        out.test.split = pc::Split::test;
        return out;
    }
    const fs::path path = cfg.str("data.path");
    if (path.empty()) throw ConfigError("data.path is required for data.source=" + source);
    if (!fs::exists(path)) throw ConfigError("dataset path '" + path.string() + "' does not exist");
    if (source == "cifar10") {
        auto [train, test] = pc::load_cifar10(path);
        return {std::move(train), std::move(test)};
    }
    if (source == "records") {
        const int h = static_cast<int>(cfg.integer("data.height"));
        const int w = static_cast<int>(cfg.integer("data.width"));
        const int c = static_cast<int>(cfg.integer("data.channels"));
        const int k = static_cast<int>(cfg.integer("data.classes"));
        if (h < 1 || w < 1 || c < 1 || k < 2) throw ConfigError("data.height/width/channels/classes out of range");
        auto make = [&](const fs::path& p, pc::Split split) {
            pc::Dataset d;
            d.items = pc::load_records(p, h, w, c, k);
            d.split = split;
            d.source = "records:" + p.string();
            d.classes = k;
            d.height = h;
            d.width = w;
            d.channels = c;
            return d;
        };
        out.train = make(path, pc::Split::train);
        const fs::path test_path = cfg.str("data.test_path");
        if (!test_path.empty()) {
            if (!fs::exists(test_path)) throw ConfigError("dataset path '" + test_path.string() + "' does not exist");
            out.test = make(test_path, pc::Split::test);
        }
        return out;
    }
    throw ConfigError("data.source must be synthetic, cifar10 or records (got '" + source + "')");
}

// The evaluation split named by data.split, truncated to data.limit items.
pc::Dataset evaluation_split(const Config& cfg) {
    auto splits = load_data(cfg);
    const auto which = cfg.str("data.split");
    pc::Dataset d;
    if (which == "train") {
        d = std::move(splits.train);
    } else if (which == "test") {
        d = std::move(splits.test);
    } else if (which == "holdout") {
        const double frac = cfg.real("train.holdout");
        if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("train.holdout must be in (0,1)");
        if (splits.train.size() < 2) throw ConfigError("training split too small for a holdout");
        d = pc::split_holdout(splits.train, frac, seed_of(cfg)).second;
    } else {
        throw ConfigError("data.split must be train, test or holdout (got '" + which + "')");
    }
    const long limit = cfg.integer("data.limit");
    if (limit >= 0 && static_cast<std::size_t>(limit) < d.size()) d.items.resize(static_cast<std::size_t>(limit));
    if (d.empty()) throw ConfigError("evaluation split '" + which + "' has no examples");
    return d;
}

pc::Checkpoint load_model(const Config& cfg, const std::string& key, const fs::path& out) {
    fs::path path = cfg.str(key);
    if (path.empty()) path = out / "checkpoint.pckp";
    if (!fs::exists(path)) throw ConfigError("checkpoint '" + path.string() + "' does not exist");
    return pc::load_checkpoint(path);
}

void check_compatible(const pc::NetworkSpec& spec, const pc::Dataset& d) {
    const auto& px = d.items.front().pixels.shape();
    if (px.h != spec.in_h || px.w != spec.in_w || px.c != spec.in_c) {
        throw ConfigError("dataset images " + px.str() + " do not fit the checkpoint's input");
    }
    for (const auto& it : d.items) {
        if (it.label >= spec.classes) throw ConfigError("dataset label exceeds the checkpoint's classes");
    }
}

json manifest_base(const std::string& subcommand, const Config& cfg) {
    json m;
    m["manifest_format_version"] = manifest_format_version;
    m["csv_schema_version"] = csv_schema_version;
    m["version"] = PATCHCERT_VERSION;
    m["subcommand"] = subcommand;
    m["seed"] = seed_of(cfg);
    m["config"] = cfg.to_json();
    return m;
}

void write_outputs(const fs::path& out, const Config& cfg, const json& manifest) {
    pc::write_file_atomic(out / "resolved.ini", cfg.to_ini());
    pc::write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
}

int cmd_train(const Config& cfg, const fs::path& out) {
    pc::TrainConfig tc;
    tc.margin = cfg.real("train.margin");
    tc.one_hot_weight = cfg.real("train.one_hot");
    tc.learning_rate = cfg.real("train.lr");
    tc.batch_size = static_cast<int>(cfg.integer("train.batch"));
    tc.epochs = static_cast<int>(cfg.integer("train.epochs"));
    tc.warmup_epochs = static_cast<int>(cfg.integer("train.warmup"));
    tc.seed = seed_of(cfg);
    tc.mode = head_of(cfg);
    tc.flip = cfg.boolean("train.flip");
    tc.crop = cfg.boolean("train.crop");
    tc.crop_padding = static_cast<int>(cfg.integer("train.crop_padding"));
    tc.holdout_fraction = cfg.real("train.holdout");
    std::tie(tc.eval_patch_h, tc.eval_patch_w) = parse_patch(cfg.str("train.eval_patch"), "train.eval_patch");
    try {
        tc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    const auto data = load_data(cfg).train;
    if (data.empty()) throw ConfigError("training split has no examples");
    pc::NetworkSpec spec;
    try {
        spec = pc::scorer_spec(static_cast<int>(cfg.integer("model.rf")), data.height, data.width,
                                data.channels, data.classes, static_cast<int>(cfg.integer("model.width")),
                                tc.mode);
        spec.validate();
        if (tc.eval_patch_h > spec.in_h || tc.eval_patch_w > spec.in_w) {
            throw std::invalid_argument("train.eval_patch larger than the input");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    fs::create_directories(out);
    std::cout << "training on " << data.size() << " examples (" << data.source << ")\n";
    const auto result = pc::train(tc, data, spec, [](const pc::EpochMetrics& m) {
        std::printf("epoch %3d  loss %+.4f  clean %.3f  cert(sum) %.3f  cert(cheap) %.3f  lr %.2e  %.1fs\n",
                    m.epoch, m.loss, m.clean_acc, m.cert_sum_acc, m.cert_cheap_acc, m.lr, m.seconds);
        std::fflush(stdout);
    });
    pc::save_checkpoint(result.checkpoint(spec), out / "checkpoint.pckp");
    pc::write_file_atomic(out / "metrics.csv", result.log.to_csv());

    json m = manifest_base("train", cfg);
    m["outputs"] = {"checkpoint.pckp", "metrics.csv"};
    m["steps"] = result.steps;
    if (!result.log.rows.empty()) {
        const auto& last = result.log.rows.back();
        m["final"] = {{"clean_acc", last.clean_acc}, {"cert32_acc", last.cert_sum_acc},
                      {"cert33_acc", last.cert_cheap_acc}};
    }
    if (result.failure) m["failure"] = *result.failure;
    write_outputs(out, cfg, m);
    if (result.failure) {
        std::cerr << "error: training diverged: " << *result.failure
                  << " (last good checkpoint written)\n";
        return 2;
    }
    return 0;
}

struct CertRow {
    int patch_h;
    int patch_w;
    std::string condition;
    std::size_t n;
    std::size_t certified;
};

int cmd_certify(const Config& cfg, const fs::path& out) {
    const auto patches = parse_patch_list(cfg.str("certify.patches"), "certify.patches");
    const auto condition = cfg.str("certify.condition");
    if (condition != "1" && condition != "2" && condition != "3" && condition != "all") {
        throw ConfigError("certify.condition must be 1, 2, 3 or all");
    }
    const auto data = evaluation_split(cfg);
    const auto ck = load_model(cfg, "certify.checkpoint", out);
    check_compatible(ck.spec, data);
    const bool binary = ck.spec.head == pc::Activation::heaviside_st;
    if (!binary && condition == "1") throw ConfigError("condition 1 needs a heaviside_st head");
    for (const auto& [h, w] : patches) {
        if (h > ck.spec.in_h || w > ck.spec.in_w) {
            throw ConfigError("patch " + std::to_string(h) + "x" + std::to_string(w) + " larger than the input");
        }
    }

    const auto heads = pc::head_outputs(ck.params, ck.spec, data, ck.spec.head);
    const auto net = ck.spec.geometry();
    const bool want_generic = binary && (condition == "1" || condition == "all");
    const unsigned workers = pc::worker_count();

    std::vector<CertRow> rows;
    std::ostringstream detail;
    detail << "index,label,pred,patch_h,patch_w,cert_generic,cert_sum,cert_cheap,min_slack,limit_top,limit_left\n";
    std::size_t clean = 0;
    bool nesting_ok = true;
    for (const auto& [ph, pw] : patches) {
        const auto plan = pc::PatchPlan::make(net, ph, pw);
        std::vector<pc::ExampleReport> reports(heads.size());
        pc::parallel_for(heads.size(), workers, [&](std::size_t i) {
            reports[i] = pc::certify_head(heads[i], data.items[i].label, plan, binary, want_generic);
        });
        std::size_t n_generic = 0;
        std::size_t n_sum = 0;
        std::size_t n_cheap = 0;
        clean = 0;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            clean += r.correct;
            n_sum += r.cert_sum;
            n_cheap += r.cert_cheap;
            const bool generic = r.cert_generic.value_or(false);
            n_generic += generic;
            if (r.cert_cheap && !r.cert_sum) nesting_ok = false;
            if (want_generic && r.cert_sum && !generic) nesting_ok = false;
            detail << i << ',' << r.label << ',' << r.predicted << ',' << ph << ',' << pw << ','
                   << (r.cert_generic ? (generic ? "1" : "0") : "") << ',' << r.cert_sum << ','
                   << r.cert_cheap << ',' << pc::fixed6(r.sum_margin) << ','
                   << (r.limiting_region ? std::to_string(r.limiting_region->top) : "") << ','
                   << (r.limiting_region ? std::to_string(r.limiting_region->left) : "") << '\n';
        }
        if (want_generic) rows.push_back({ph, pw, "1", reports.size(), n_generic});
        if (condition == "2" || condition == "all") rows.push_back({ph, pw, "2", reports.size(), n_sum});
        if (condition == "3" || condition == "all") rows.push_back({ph, pw, "3", reports.size(), n_cheap});
    }

    std::ostringstream sweep;
    sweep << "patch_h,patch_w,condition,n,n_certified,cert_acc\n";
    for (const auto& r : rows) {
        sweep << r.patch_h << ',' << r.patch_w << ',' << r.condition << ',' << r.n << ',' << r.certified
              << ',' << pc::fixed6(static_cast<double>(r.certified) / r.n) << '\n';
        std::printf("patch %dx%d  condition %s  certified %zu/%zu\n", r.patch_h, r.patch_w,
                    r.condition.c_str(), r.certified, r.n);
    }
    std::printf("clean accuracy %zu/%zu\n", clean, heads.size());

    fs::create_directories(out);
    pc::write_file_atomic(out / "certify_sweep.csv", sweep.str());
    pc::write_file_atomic(out / "certify_detail.csv", detail.str());
    json m = manifest_base("certify", cfg);
    m["outputs"] = {"certify_sweep.csv", "certify_detail.csv"};
    m["n"] = heads.size();
    m["clean"] = clean;
    if (condition == "all") m["nesting_ok"] = nesting_ok;
    write_outputs(out, cfg, m);
    if (condition == "all") {
        if (!nesting_ok) {
            std::cerr << "error: condition nesting violated (cheap => sum => generic)\n";
            return 2;
        }
        std::printf("nesting check passed\n");
    }
    return 0;
}

int cmd_attack(const Config& cfg, const fs::path& out) {
    pc::AttackConfig ac;
    std::tie(ac.patch_h, ac.patch_w) = parse_patch(cfg.str("attack.patch"), "attack.patch");
    ac.steps = static_cast<int>(cfg.integer("attack.steps"));
    ac.step_size = cfg.real("attack.step_size");
    ac.margin = cfg.real("attack.margin");
    ac.seed = seed_of(cfg);
    try {
        ac.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto data = evaluation_split(cfg);
    const auto ck = load_model(cfg, "attack.checkpoint", out);
    check_compatible(ck.spec, data);
    if (ac.patch_h > ck.spec.in_h || ac.patch_w > ck.spec.in_w) throw ConfigError("attack patch larger than the input");

    const auto plan = pc::PatchPlan::make(ck.spec.geometry(), ac.patch_h, ac.patch_w);
    const bool binary = ck.spec.head == pc::Activation::heaviside_st;
    std::vector<pc::AttackResult> results(data.size());
    std::vector<pc::ExampleReport> reports(data.size());
    pc::parallel_for(data.size(), pc::worker_count(), [&](std::size_t i) {
        const auto& item = data.items[i];
        const auto head = pc::forward(ck.params, ck.spec, item.pixels).head;
        reports[i] = pc::certify_head(head, item.label, plan, binary);
        auto c = ac;
        c.seed = ac.seed + i;
        results[i] = pc::pgd_patch_attack(ck.params, ck.spec, item.pixels, item.label, c);
    });

    std::ostringstream csv;
    csv << "index,true_label,target,l_top,l_left,success,clean_pred,adv_pred,steps_used\n";
    std::size_t clean = 0;
    std::size_t robust = 0;
    std::size_t certified = 0;
    std::size_t broken_certified = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        const int label = data.items[i].label;
        csv << i << ',' << label << ',' << r.target << ',' << r.region.top << ',' << r.region.left << ','
            << r.success << ',' << r.clean_pred << ',' << r.adv_pred << ',' << r.steps_used << '\n';
        clean += reports[i].correct;
        robust += reports[i].correct && !r.success;
        certified += reports[i].cert_sum;
        broken_certified += reports[i].cert_sum && r.success;
    }
    const double n = static_cast<double>(results.size());
    std::printf("clean_acc %.6f adversarial_acc %.6f certified_acc %.6f (n=%zu, patch %dx%d)\n", clean / n,
                robust / n, certified / n, results.size(), ac.patch_h, ac.patch_w);

    fs::create_directories(out);
    pc::write_file_atomic(out / "attack.csv", csv.str());
    json m = manifest_base("attack", cfg);
    m["outputs"] = {"attack.csv"};
    m["aggregate"] = {{"n", results.size()}, {"clean_acc", clean / n}, {"adversarial_acc", robust / n},
                      {"certified_acc", certified / n}};
    write_outputs(out, cfg, m);
    if (broken_certified > 0) {
        std::cerr << "error: " << broken_certified << " certified examples were broken by the attack\n";
        return 2;
    }
    return 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

int cmd_bench(const Config& cfg, const fs::path& out) {
    const long reps = cfg.integer("bench.reps");
    if (reps < 1) throw ConfigError("bench.reps must be >= 1");
    const auto [ph, pw] = parse_patch(cfg.str("bench.patch"), "bench.patch");
    std::vector<pc::ScoreMap> maps;
    std::vector<int> labels;
    const fs::path blob = cfg.str("bench.blob");
    if (!blob.empty()) {
        if (!fs::exists(blob)) throw ConfigError("score-map blob '" + blob.string() + "' does not exist");
        std::ifstream in(blob, std::ios::binary);
        while (auto s = pc::read_score_map(in)) {
            labels.push_back(pc::classify(*s).predicted);
            maps.push_back(std::move(*s));
        }
        if (maps.empty()) throw ConfigError("score-map blob '" + blob.string() + "' holds no maps");
        for (const auto& s : maps) {
            if (s.rows() != maps[0].rows() || s.cols() != maps[0].cols() || s.classes() != maps[0].classes()) {
                throw ConfigError("score maps in the blob differ in shape");
            }
        }
    } else {
        const long n = cfg.integer("bench.maps");
        const int rows = static_cast<int>(cfg.integer("bench.rows"));
        const int cols = static_cast<int>(cfg.integer("bench.cols"));
        const int classes = static_cast<int>(cfg.integer("bench.classes"));
        if (n < 1 || rows < 1 || cols < 1 || classes < 2) throw ConfigError("bench map dimensions out of range");
        std::mt19937_64 rng(seed_of(cfg));
        std::uniform_int_distribution<int> label(0, classes - 1);
        std::bernoulli_distribution hit(0.9);
        std::bernoulli_distribution miss(0.2);
        for (long k = 0; k < n; ++k) {
            const int t = label(rng);
            std::vector<std::uint8_t> v(static_cast<std::size_t>(rows) * cols * classes);
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = (static_cast<int>(i % classes) == t ? hit(rng) : miss(rng)) ? 1 : 0;
            }
            maps.emplace_back(rows, cols, classes, std::move(v));
            labels.push_back(t);
        }
    }
    const int rows = maps[0].rows();
    const int cols = maps[0].cols();
    pc::NetGeometry net;
    try {
        net = pc::scorer_spec(static_cast<int>(cfg.integer("bench.rf")), rows, cols, 3, maps[0].classes(), 1)
                  .geometry();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (ph > rows || pw > cols) throw ConfigError("bench.patch larger than the score maps");
    const auto plan = pc::PatchPlan::make(net, ph, pw);

    std::vector<double> t_sum;
    std::vector<double> t_cheap;
    std::size_t n_sum = 0;
    std::size_t n_cheap = 0;
    for (long r = 0; r < reps; ++r) {
        auto start = std::chrono::steady_clock::now();
        n_sum = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            n_sum += pc::certify_sum(maps[i], labels[i], plan.dependencies, &plan.regions).certified;
        }
        t_sum.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        start = std::chrono::steady_clock::now();
        n_cheap = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            n_cheap += pc::certify_cheap(maps[i], labels[i], plan.r_max).certified;
        }
        t_cheap.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    const double scale = 10000.0 / static_cast<double>(maps.size());
    const double sum_median = median(t_sum);
    const double cheap_median = median(t_cheap);

    std::ostringstream csv;
    csv << "condition,maps,regions,reps,certified,median_seconds,seconds_per_10k\n";
    csv << "2," << maps.size() << ',' << plan.regions.size() << ',' << reps << ',' << n_sum << ','
        << pc::fixed6(sum_median) << ',' << pc::fixed6(sum_median * scale) << '\n';
    csv << "3," << maps.size() << ',' << plan.regions.size() << ',' << reps << ',' << n_cheap << ','
        << pc::fixed6(cheap_median) << ',' << pc::fixed6(cheap_median * scale) << '\n';
    std::printf("condition 2: %.4f s per 10k maps (%zu regions, %zu certified)\n", sum_median * scale,
                plan.regions.size(), n_sum);
    std::printf("condition 3: %.4f s per 10k maps (%zu certified)\n", cheap_median * scale, n_cheap);

    fs::create_directories(out);
    pc::write_file_atomic(out / "bench.csv", csv.str());
    json m = manifest_base("bench", cfg);
    m["outputs"] = {"bench.csv"};
    m["seconds_per_10k"] = {{"condition2", sum_median * scale}, {"condition3", cheap_median * scale}};
    write_outputs(out, cfg, m);
    return 0;
}

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "INI config file");
    sub->add_option("--out", args.out, "Output directory");
    sub->add_option("--seed", args.seed, "Run seed (overrides run.seed)");
    sub->add_option("--set", args.overrides, "Override KEY=VALUE (repeatable)")->allow_extra_args(false);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certified patch-robust region-scoring classifiers"};
    app.set_version_flag("--version", std::string(PATCHCERT_VERSION));
    app.require_subcommand(1);
    CommonArgs args;
    auto* train = app.add_subcommand("train", "Train a region scorer");
    auto* certify = app.add_subcommand("certify", "Certify a checkpoint on a dataset split");
    auto* attack = app.add_subcommand("attack", "Run the patch attack on a dataset split");
    auto* bench = app.add_subcommand("bench", "Time certification on score maps");
    for (auto* sub : {train, certify, attack, bench}) add_common(sub, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const Config cfg = resolve(args);
        const fs::path out = args.out;
        if (train->parsed()) return cmd_train(cfg, out);
        if (certify->parsed()) return cmd_certify(cfg, out);
        if (attack->parsed()) return cmd_attack(cfg, out);
        return cmd_bench(cfg, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
