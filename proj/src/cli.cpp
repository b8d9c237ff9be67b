#include "dpanet/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpanet/checkpoint.hpp"
#include "dpanet/config.hpp"
#include "dpanet/errors.hpp"
#include "dpanet/gradsuite.hpp"
#include "dpanet/image_io.hpp"
#include "dpanet/metrics.hpp"

namespace dpanet {

namespace fs = std::filesystem;

namespace {

// Turns leftover "--key=value" / "--key value" arguments into pairs.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.size() == 2) throw ConfigError("unexpected argument '" + a + "'");
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size()) throw ConfigError("missing value for " + a);
            out.emplace_back(a.substr(2), extras[++i]);
        }
    }
    return out;
}

void require(const std::string& value, const char* key, const std::string& command) {
    if (value.empty()) throw ConfigError(command + " needs --" + key);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

std::string metric_row(const std::string& id, double p, double s, double m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", id.c_str(), p, s, m);
    return buf;
}

int gen_data(const RunConfig& cfg, std::ostream& out) {
    generate_dataset(cfg.synth, cfg.out);
    write_text(fs::path(cfg.out) / "config.txt", cfg.to_text());
    out << "wrote " << cfg.synth.count << " triplets to " << cfg.out << "\n";
    return exit_ok;
}

int train(const RunConfig& cfg, std::ostream& out) {
    const std::vector<Triplet> data = read_dataset(cfg.data);
    const fs::path dir = cfg.out;
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.to_text());

    std::ofstream log(dir / "train_log.csv", std::ios::binary);
    log << epoch_log_header() << "\n";
    out << "training on " << data.size() << " samples from " << cfg.data << "\n" << epoch_log_header() << "\n";
    auto on_epoch = [&](const EpochRecord& r, const ParamStore<float>& params) {
        const std::string line = format_epoch(r);
        log << line << "\n" << std::flush;
        out << line << "\n" << std::flush;
        save_checkpoint(params, dir / "last.dpan");
    };
    ParamStore<float> initial;
    const ParamStore<float>* start = nullptr;
    if (!cfg.checkpoint.empty()) {
        initial = load_checkpoint(cfg.checkpoint, cfg.net);
        start = &initial;
    }
    TrainResult result = train_loop(data, cfg.train, cfg.net, on_epoch, start);
    save_checkpoint(result.params, dir / "last.dpan");
    save_checkpoint(result.best_params, dir / "best.dpan");

    nlohmann::ordered_json split;
    split["train"] = nlohmann::json::array();
    split["val"] = nlohmann::json::array();
    for (int i : result.split.train) split["train"].push_back(data[i].id);
    for (int i : result.split.val) split["val"].push_back(data[i].id);
    write_text(dir / "split.json", split.dump(2) + "\n");
    out << "checkpoints written to " << (dir / "last.dpan").string() << " and " << (dir / "best.dpan").string()
        << "\n";
    return exit_ok;
}

int eval(const RunConfig& cfg, std::ostream& out) {
    const ParamStore<float> params = load_checkpoint(cfg.checkpoint, cfg.net);
    const std::vector<Triplet> data = read_dataset(cfg.data);
    if (data.empty()) throw std::runtime_error("no samples in " + cfg.data);
    const fs::path dir = cfg.out;
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.to_text());

    std::string csv = "id,psnr,ssim,mae\n";
    double sp = 0, ss = 0, sm = 0, blurry = 0;
    for (const Triplet& t : data) {
        const Tensor<float> restored = restore_image(t.left, t.right, params, cfg.net);
        write_png(dir / (t.id + "_restored.png"), restored);
        const double p = psnr(restored, t.sharp), s = ssim(restored, t.sharp), m = mae(restored, t.sharp);
        csv += metric_row(t.id, p, s, m);
        sp += p;
        ss += s;
        sm += m;
        blurry += psnr(t.left, t.sharp);
    }
    const double n = static_cast<double>(data.size());
    csv += metric_row("mean", sp / n, ss / n, sm / n);
    write_text(dir / "metrics.csv", csv);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu images: psnr %.3f dB (left view %.3f dB), ssim %.4f, mae %.4f\n", data.size(),
                  sp / n, blurry / n, ss / n, sm / n);
    out << buf;
    return exit_ok;
}

int infer(const RunConfig& cfg, std::ostream& out) {
    const ParamStore<float> params = load_checkpoint(cfg.checkpoint, cfg.net);
    const std::vector<Triplet> pairs = read_pairs(cfg.data);
    const fs::path dir = cfg.out;
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.to_text());
    for (const Triplet& t : pairs)
        write_png(dir / (t.id + "_restored.png"), restore_image(t.left, t.right, params, cfg.net));
    out << "restored " << pairs.size() << " pairs into " << cfg.out << "\n";
    return exit_ok;
}

int gradcheck(std::ostream& out) {
    const auto start = std::chrono::steady_clock::now();
    const auto rows = run_gradient_suite();
    out << format_gradient_table(rows);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "elapsed %.1f s\n", secs);
    out << buf;
    for (const auto& r : rows)
        if (!r.passed()) return exit_runtime;
    return exit_ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual-pixel defocus deblurring with encoder and decoder alignment"};
    app.name("dpanet");
    app.allow_extras();
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::pair<std::string, std::optional<std::string>>> named = {
        {"seed", {}}, {"out", {}}, {"data", {}}, {"checkpoint", {}}, {"count", {}}, {"epochs", {}}};
    app.add_option("--config", config_path, "key = value settings file")->check(CLI::ExistingFile);
    const char* help[] = {"global seed", "output directory", "dataset directory", "checkpoint path",
                          "number of triplets (gen-data)", "training epochs"};
    for (std::size_t i = 0; i < named.size(); ++i)
        app.add_option("--" + named[i].first, named[i].second, help[i]);

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "write synthetic dual-pixel triplets and manifest.json to --out"},
        {"train", "train on --data, writing checkpoints and the epoch log to --out"},
        {"eval", "restore --data with --checkpoint; write metrics.csv and images to --out"},
        {"infer", "restore left/right pairs in --data with --checkpoint into --out"},
        {"gradcheck", "finite-difference check of every differentiable operator"}};
    for (const auto& [name, text] : commands) app.add_subcommand(name, text)->allow_extras();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "dpanet: " << e.what() << "\n";
        return exit_config;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg.apply_file(config_path);
        for (const auto& [key, value] : named)
            if (value) cfg.set(key, *value);
        for (const auto& [key, value] : parse_overrides(app.remaining(true))) cfg.set(key, value);
        cfg.resolve();
        if (command == "gen-data") {
            require(cfg.out, "out", command);
            if (cfg.synth.count < 1) throw ConfigError("gen-data needs count >= 1");
        } else if (command == "train") {
            require(cfg.data, "data", command);
            require(cfg.out, "out", command);
        } else if (command == "eval" || command == "infer") {
            require(cfg.checkpoint, "checkpoint", command);
            require(cfg.data, "data", command);
            require(cfg.out, "out", command);
        }
    } catch (const ConfigError& e) {
        err << "dpanet: invalid configuration: " << e.what() << "\n";
        return exit_config;
    }

    try {
        if (command == "gen-data") return gen_data(cfg, out);
        if (command == "train") return train(cfg, out);
        if (command == "eval") return eval(cfg, out);
        if (command == "infer") return infer(cfg, out);
        return gradcheck(out);
    } catch (const std::exception& e) {
        err << "dpanet " << command << ": " << e.what() << "\n";
        return exit_runtime;
    }
}

}  // namespace dpanet
