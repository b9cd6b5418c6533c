// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "patchcert/patchcert.hpp"
#include "test_support.hpp"

namespace pc = patchcert;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

fs::path work_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "patchcert_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int cli(const std::string& args, const fs::path& dir) {
    const std::string cmd = std::string(PATCHCERT_CLI) + " " + args + " > " + (dir / "stdout.txt").string() +
                            " 2> " + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Rows keyed by header name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
    std::istringstream in(pc::read_file(path));
    std::string line;
    std::vector<std::string> header;
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (header.empty()) {
            header = cells;
            continue;
        }
        std::map<std::string, std::string> row;
        for (std::size_t k = 0; k < header.size() && k < cells.size(); ++k) row[header[k]] = cells[k];
        rows.push_back(row);
    }
    return rows;
}

// Criterion 1 ---------------------------------------------------------------

Outcome nesting() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    const auto g = pc::sum_aggregator();
    int c3 = 0, c2 = 0, c1 = 0, witness = 0, violations = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int label = trial % 4;
        const double p_other = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
        const auto s = pc::testing::biased_map(8, 8, 4, label, 0.95, p_other, rng);
        const auto net = pc::testing::random_geometry(8, 8, 2, rng);
        const int ph = std::uniform_int_distribution<int>(1, 3)(rng);
        const int pw = std::uniform_int_distribution<int>(1, 3)(rng);
        pc::RegionSet regions;
        for (const auto& l : pc::enumerate_regions(8, 8, ph, pw))
            if (std::bernoulli_distribution(0.4)(rng)) regions.push_back(l);
        if (regions.empty()) regions.push_back({0, 0, ph, pw});
        const bool r3 = pc::certify_cheap(s, label, pc::r_max(regions, net)).certified;
        const bool r2 = pc::certify_sum(s, label, regions, net).certified;
        const bool r1 = pc::certify_generic(s, label, regions, net, g).certified;
        violations += (r3 && !r2) + (r2 && !r1);
        c3 += r3;
        c2 += r2;
        c1 += r1;
        witness += r2 && !r3;
    }
    const double secs = seconds_since(t0);
    return {violations == 0 && witness >= 1 && secs < 30.0,
            fmt("500 maps: cert3=%d cert2=%d cert1=%d, witnesses(2 not 3)=%d, violations=%d, %.2f s (< 30)", c3,
                c2, c1, witness, violations, secs)};
}

// Criterion 2 ---------------------------------------------------------------

Outcome exhaustive_soundness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1002);
    int bases = 0, certified = 0, variants = 0, misclassified = 0;
    std::map<int, int> by_size;
    while (certified < 100 && bases < 100000) {
        const int rows = std::uniform_int_distribution<int>(1, 3)(rng);
        const int cols = std::uniform_int_distribution<int>(1, 3)(rng);
        const int label = bases % 2;
        const auto s = pc::testing::biased_map(rows, cols, 2, label, 0.95, 0.05, rng);
        const auto net = pc::testing::random_geometry(rows, cols, 2, rng);
        const int ph = std::uniform_int_distribution<int>(1, rows)(rng);
        const int pw = std::uniform_int_distribution<int>(1, cols)(rng);
        const pc::PatchRegion l{std::uniform_int_distribution<int>(0, rows - ph)(rng),
                                std::uniform_int_distribution<int>(0, cols - pw)(rng), ph, pw};
        ++bases;
        if (!pc::certify_sum(s, label, pc::RegionSet{l}, net).certified) continue;
        ++certified;
        const auto dep = pc::dependency_region(l, net);
        ++by_size[dep.cardinality()];
        std::vector<std::pair<int, int>> cells;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                if (dep.contains(i, j)) cells.emplace_back(i, j);
        const int bits = static_cast<int>(cells.size()) * 2;
        for (long mask = 0; mask < (1L << bits); ++mask) {
            long votes[2] = {0, 0};
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    if (!dep.contains(i, j))
                        for (int c = 0; c < 2; ++c) votes[c] += s.at(i, j, c);
            for (int b = 0; b < bits; ++b) votes[b % 2] += (mask >> b) & 1;
            ++variants;
            misclassified += votes[label] <= votes[1 - label];
        }
    }
    const double secs = seconds_since(t0);
    std::string sizes;
    for (const auto& [k, v] : by_size) sizes += fmt(" |R|=%d:%d", k, v);
    return {bases >= 100 && certified >= 100 && misclassified == 0 && secs < 60.0,
            fmt("%d base maps, %d certified (%s ), %d adversarial variants enumerated, %d misclassified, "
                "%.2f s (< 60)",
                bases, certified, sizes.c_str(), variants, misclassified, secs)};
}

// Criterion 3 ---------------------------------------------------------------

Outcome integral_image() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1003);
    long queries = 0, mismatches = 0;
    for (int m = 0; m < 200; ++m) {
        const int rows = std::uniform_int_distribution<int>(6, 10)(rng);
        const int cols = std::uniform_int_distribution<int>(6, 10)(rng);
        const int classes = std::uniform_int_distribution<int>(2, 5)(rng);
        const int label = m % classes;
        const auto s = pc::testing::biased_map(rows, cols, classes, label, 0.6, 0.4, rng);
        const auto d = pc::delta_map(s, label);
        const auto table = pc::build_integral_image(d);
        for (int h = 1; h <= 6; ++h)
            for (int w = 1; w <= 6; ++w)
                for (int r0 = 0; r0 + h <= rows; ++r0)
                    for (int c0 = 0; c0 + w <= cols; ++c0)
                        for (int c = 0; c < classes; ++c) {
                            long naive = 0;
                            for (int i = r0; i < r0 + h; ++i)
                                for (int j = c0; j < c0 + w; ++j)
                                    naive += static_cast<int>(s.at(i, j, label)) - static_cast<int>(s.at(i, j, c));
                            ++queries;
                            mismatches += table.region_sum(c, {r0, r0 + h, c0, c0 + w}) != naive;
                        }
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 10.0,
            fmt("200 maps, %ld rectangle queries, %ld mismatches, %.2f s (< 10)", queries, mismatches, secs)};
}

// Criterion 4 ---------------------------------------------------------------

Outcome containment() {
    std::mt19937_64 rng(1004);
    const int size = 16;
    int trials = 0, leaks = 0, changed = 0;
    for (int rf : {5, 7, 9, 11, 13}) {
        const auto spec = pc::scorer_spec(rf, size, size, 3, 4, 6);
        const auto net = spec.geometry();
        auto p = pc::build_model(spec, static_cast<std::uint64_t>(rf));
        pc::testing::randomize(p, rng, 0.6);
        for (int t = 0; t < 20; ++t) {
            const int py = std::uniform_int_distribution<int>(0, size - 1)(rng);
            const int px = std::uniform_int_distribution<int>(0, size - 1)(rng);
            const auto x = pc::testing::random_tensor<float>({1, size, size, 3}, rng, 0.0, 1.0);
            auto xp = x;
            for (int ch = 0; ch < 3; ++ch) xp(0, py, px, ch) = 1.0f - x(0, py, px, ch);
            const auto a = pc::forward(p, spec, x).logits;
            const auto b = pc::forward(p, spec, xp).logits;
            const auto dep = pc::dependency_region({py, px, 1, 1}, net);
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j)
                    for (int c = 0; c < 4; ++c) {
                        const bool diff = a(0, i, j, c) != b(0, i, j, c);
                        if (dep.contains(i, j)) changed += diff;
                        else leaks += diff;
                    }
            ++trials;
        }
    }
    return {leaks == 0 && trials == 100,
            fmt("rf5..rf13 x 20 single-pixel trials: %d logits changed outside the dependency region, "
                "%d changed inside",
                leaks, changed)};
}

// Criterion 5 ---------------------------------------------------------------

Outcome gradients() {
    const auto spec = pc::scorer_spec(5, 8, 8, 3, 3, 4, pc::Activation::sigmoid);
    std::mt19937_64 rng(1005);
    auto p = pc::build_model(spec, 1).cast<double>();
    pc::testing::randomize(p, rng, 0.8);
    const auto x = pc::testing::random_tensor<double>({2, 8, 8, 3}, rng, 0.0, 1.0);
    const std::vector<int> labels{0, 2};
    const double margin = 1.0;
    const double sigma = 0.5;
    auto loss_at = [&](const pc::BasicParameters<double>& q) {
        const auto out = pc::forward(q, spec, x, pc::Activation::sigmoid);
        return pc::batch_loss(out.head, labels, margin, sigma).value;
    };

    pc::GradTape<double> tape;
    const auto g = pc::record_forward(tape, p, spec, x, pc::Activation::sigmoid, true);
    const auto loss = pc::batch_loss(tape.value(g.head), labels, margin, sigma);
    tape.backward(g.head, loss.head_grad);

    const double h = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
        const auto grad = tape.grad(g.params[k]);
        for (std::size_t i = 0; i < p.tensors[k].size(); ++i) {
            auto q = p;
            q.tensors[k][i] += h;
            const double up = loss_at(q);
            q.tensors[k][i] -= 2 * h;
            const double fd = (up - loss_at(q)) / (2 * h);
            const double rel = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-6});
            worst = std::max(worst, rel);
            ++checked;
        }
    }

    const auto z = pc::testing::random_tensor<double>({1, 10, 10, 10}, rng, -8.0, 8.0);
    const auto y = pc::activation(z, pc::Activation::heaviside_st);
    const auto back =
        pc::activation_backward(z, y, pc::BasicTensor<double>(z.shape(), 1.0), pc::Activation::heaviside_st);
    int st_mismatch = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-z[i]));
        st_mismatch += back[i] != s * (1.0 - s);
    }
    return {worst <= 1e-4 && st_mismatch == 0,
            fmt("%zu parameters, worst relative error %.2e (<= 1e-4); straight-through mismatches %d/1000",
                checked, worst, st_mismatch)};
}

// Criterion 6 ---------------------------------------------------------------

// Midpoint rule for 1 - (1/R) * int_0^R H(m > 2r) dr.
double integrated_expected_loss(double m, double big_r, int points) {
    const double dr = big_r / points;
    double acc = 0.0;
    for (int k = 0; k < points; ++k) acc += (m > 2.0 * (k + 0.5) * dr) ? dr : 0.0;
    return 1.0 - acc / big_r;
}

Outcome loss_closed_form() {
    std::mt19937_64 rng(1006);
    double worst = 0.0;
    int configs = 0, negative_seen = 0, negative_disagree = 0;
    while (configs < 100) {
        const int rows = std::uniform_int_distribution<int>(4, 12)(rng);
        const int cols = std::uniform_int_distribution<int>(4, 12)(rng);
        const int classes = std::uniform_int_distribution<int>(2, 6)(rng);
        const int label = std::uniform_int_distribution<int>(0, classes - 1)(rng);
        const double p_true = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
        const auto s = pc::testing::biased_map(rows, cols, classes, label, p_true, 0.3, rng);
        const double cells = rows * cols;
        const auto scores = pc::classify(s).scores;
        std::vector<double> d(classes);
        double m = 1e300;
        for (int c = 0; c < classes; ++c) {
            d[c] = static_cast<double>(scores[label] - scores[c]) / cells;
            if (c != label) m = std::min(m, static_cast<double>(scores[label] - scores[c]));
        }
        for (double big_m : {0.25, 0.5, 0.75, 1.0}) {
            const double closed = pc::margin_loss(d, label, big_m).value;
            const double big_r = big_m * cells / 2.0;
            // affine map from the expected-loss scale [0,1] to [-M, 0]
            const double numeric = big_m * (integrated_expected_loss(m, big_r, 10000) - 1.0);
            if (m < 0) {
                negative_disagree += std::abs(closed - numeric) > 1e-3;
                continue;
            }
            worst = std::max(worst, std::abs(closed - numeric));
        }
        if (m < 0) ++negative_seen;
        else ++configs;
    }
    return {worst <= 1e-3,
            fmt("100 configs x M in {.25,.5,.75,1}: max |closed - integrated| = %.2e (<= 1e-3); "
                "misclassified configs (min delta < 0, outside the integral's support) seen %d, "
                "disagreeing pairs %d (reported only)",
                worst, negative_seen, negative_disagree)};
}

// Criteria 7 and 8 ----------------------------------------------------------

struct TrainedRun {
    bool ok = false;
    fs::path dir;
    std::string why;
};

TrainedRun trained;

Outcome desk_training() {
    trained.dir = work_dir("train");
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = cli("train --out " + trained.dir.string(), trained.dir);
    const double secs = seconds_since(t0);
    if (rc != 0) return {false, fmt("train exited %d after %.1f s", rc, secs)};
    trained.ok = true;

    const auto cdir = work_dir("certify");
    const int crc = cli("certify --out " + cdir.string() + " --set certify.checkpoint=" +
                            (trained.dir / "checkpoint.pckp").string() + " --set certify.patches=3x3,7x7",
                        cdir);
    if (crc != 0) return {false, fmt("certify exited %d", crc)};
    std::size_t n = 0, clean = 0, cert = 0;
    for (const auto& row : read_csv(cdir / "certify_detail.csv")) {
        if (row.at("patch_h") != "3") continue;
        ++n;
        clean += row.at("label") == row.at("pred");
        cert += row.at("cert_sum") == "1";
    }
    const double clean_acc = n ? static_cast<double>(clean) / n : 0.0;
    const double cert_acc = n ? static_cast<double>(cert) / n : 0.0;
    return {secs <= 300.0 && clean_acc >= 0.9 && cert_acc >= 0.6,
            fmt("default config: %.1f s (<= 300), holdout n=%zu clean %.3f (>= 0.9), certified 3x3 %.3f (>= 0.6)",
                secs, n, clean_acc, cert_acc)};
}

Outcome attack_consistency() {
    if (!trained.ok) return {false, "no trained checkpoint from criterion 7"};
    const auto cert = read_csv(fs::temp_directory_path() / "patchcert_acceptance" / "certify" / "certify_detail.csv");
    std::string detail;
    bool pass = true;
    for (int size : {3, 7}) {
        const auto dir = work_dir("attack" + std::to_string(size));
        const std::string patch = std::to_string(size) + "x" + std::to_string(size);
        const int rc = cli("attack --out " + dir.string() + " --set attack.checkpoint=" +
                               (trained.dir / "checkpoint.pckp").string() + " --set attack.patch=" + patch,
                           dir);
        if (rc != 0) {
            pass = false;
            detail += fmt("%s: attack exited %d; ", patch.c_str(), rc);
            continue;
        }
        std::map<std::string, bool> certified;
        for (const auto& row : cert)
            if (row.at("patch_h") == std::to_string(size)) certified[row.at("index")] = row.at("cert_sum") == "1";
        std::size_t n = 0, robust = 0, n_cert = 0, broken = 0;
        for (const auto& row : read_csv(dir / "attack.csv")) {
            const bool ok = row.at("clean_pred") == row.at("true_label") && row.at("success") == "0";
            const bool c = certified.at(row.at("index"));
            ++n;
            robust += ok;
            n_cert += c;
            broken += c && row.at("success") == "1";
        }
        const bool good = n > 0 && robust >= n_cert && broken == 0;
        pass = pass && good;
        detail += fmt("%s: n=%zu adversarial %.3f >= certified %.3f, certified broken %zu; ", patch.c_str(), n,
                      n ? static_cast<double>(robust) / n : 0.0, n ? static_cast<double>(n_cert) / n : 0.0, broken);
    }
    return {pass, detail};
}

// Criterion 9 ---------------------------------------------------------------

Outcome throughput() {
    auto bench = [](const std::string& name, const std::string& extra, double& sum, double& cheap,
                    std::string& regions) {
        const auto dir = work_dir(name);
        if (cli("bench --out " + dir.string() + extra, dir) != 0) return false;
        const auto rows = read_csv(dir / "bench.csv");
        sum = std::stod(rows.at(0).at("seconds_per_10k"));
        cheap = std::stod(rows.at(1).at("seconds_per_10k"));
        regions = rows.at(0).at("regions");
        return true;
    };
    double s784 = 0, c784 = 0, s1 = 0, c1 = 0;
    std::string r784, r1;
    if (!bench("bench784", " --set bench.reps=5", s784, c784, r784)) return {false, "bench exited nonzero"};
    if (!bench("bench1", " --set bench.reps=5 --set bench.patch=32x32", s1, c1, r1))
        return {false, "bench (single region) exited nonzero"};
    const double ratio = c784 / c1;
    return {r784 == "784" && r1 == "1" && s784 < 5.0 && ratio > 1.0 / 3.0 && ratio < 3.0,
            fmt("10000 maps 32x32x10: condition 2 %.3f s over %s regions (< 5); condition 3 %.4f s at %s regions vs "
                "%.4f s at %s region, ratio %.2f (in [1/3, 3]); condition 2 at 1 region %.3f s",
                s784, r784.c_str(), c784, r784.c_str(), c1, r1.c_str(), ratio, s1)};
}

// Criterion 10 --------------------------------------------------------------

Outcome ablation() {
    const pc::Activation modes[] = {pc::Activation::heaviside_st, pc::Activation::softmax_channel,
                                    pc::Activation::sigmoid};
    bool pass = true;
    std::string detail;
    for (const auto mode : modes) {
        int improved = 0, completed = 0, failed = 0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto data = pc::synth_textures(100, 16, 16, seed);
            const auto spec = pc::scorer_spec(5, 16, 16, 3, 2, 16, mode);
            pc::TrainConfig cfg;
            cfg.epochs = 10;
            cfg.warmup_epochs = 1;
            cfg.crop_padding = 2;
            cfg.seed = seed;
            cfg.mode = mode;
            const auto r = pc::train(cfg, data, spec);
            if (r.failure) {
                ++failed;
                continue;
            }
            ++completed;
            const auto& rows = r.log.rows;
            improved += rows.size() == 10 && rows.back().loss < rows.front().loss;
        }
        const bool asserted = mode != pc::Activation::sigmoid;
        if (asserted) pass = pass && completed == 5 && improved >= 4;
        detail += fmt("%s: %d/5 completed, %d diverged, loss improved in %d/5%s; ", std::string(pc::to_string(mode)).c_str(), completed,
                      failed, improved, asserted ? " (need >= 4)" : " (reported only)");
    }
    return {pass, detail};
}

}  // namespace

// With arguments, runs only the listed criterion numbers (8 needs 7).
int main(int argc, char** argv) {
    const std::vector<std::function<Outcome()>> criteria = {
        nesting,          exhaustive_soundness, integral_image,     containment, gradients,
        loss_closed_form, desk_training,        attack_consistency, throughput,  ablation};
    std::vector<std::size_t> selected;
    for (int a = 1; a < argc; ++a) {
        const int k = std::atoi(argv[a]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::fprintf(stderr, "unknown criterion '%s'\n", argv[a]);
            return 2;
        }
        selected.push_back(static_cast<std::size_t>(k - 1));
    }
    if (selected.empty())
        for (std::size_t k = 0; k < criteria.size(); ++k) selected.push_back(k);
    int failures = 0;
    for (const std::size_t k : selected) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %zu: %s  %s [%.1f s]\n", k + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(selected.size()) - failures, selected.size());
    return failures == 0 ? 0 : 1;
}
