// ivimlab command line: phantom, fit, fuse, metrics, report, classify.
//
// Exit codes: 0 success, 2 usage or input error, 1 internal failure.
// Every subcommand resolves its settings as defaults <- --config JSON <- flags
// and echoes the resolved settings into its report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ivimlab/ivimlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ivimlab;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitInternal = 1;

// Settings for one subcommand: defaults, then config file, then flags.
class Settings {
public:
    explicit Settings(json defaults) : values_(std::move(defaults)) {}

    void load_config(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        json cfg;
        try {
            cfg = json::parse(in);
        } catch (const json::parse_error& e) {
            throw FormatError("config " + path + ": " + e.what());
        }
        if (!cfg.is_object()) throw FormatError("config " + path + ": top level must be an object");
        for (auto it = cfg.begin(); it != cfg.end(); ++it) {
            if (!values_.contains(it.key())) throw ArgumentError("config " + path + ": unknown key '" + it.key() + "'");
            values_[it.key()] = it.value();
        }
    }

    template <typename T>
    CLI::Option* bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        return app->add_option_function<T>(flag, [this, key](const T& v) { overrides_[key] = v; }, help);
    }

    void apply_overrides() {
        for (auto& [k, v] : overrides_) values_[k] = v;
    }

    template <typename T>
    T get(const std::string& key) const {
        try {
            return values_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ArgumentError("setting '" + key + "': " + e.what());
        }
    }

    const json& values() const { return values_; }

private:
    json values_;
    std::map<std::string, json> overrides_;
};

void write_text(const fs::path& path, const std::string& text) { nifti::detail::write_atomically(path, text); }

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());
}

std::array<double, 3> triple(const json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 3) throw ArgumentError("setting '" + key + "' must be a list of 3 numbers");
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

// ---------------------------------------------------------------------------
// phantom

phantom::FieldSpec field_from_json(const json& j, const std::string& key) {
    if (j.is_number()) return phantom::FieldSpec::constant(j.get<double>());
    if (!j.is_object()) throw ArgumentError("setting '" + key + "' must be a number or a field object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "kind" && it.key() != "value" && it.key() != "value2") {
            throw ArgumentError("setting '" + key + "': unknown key '" + it.key() + "'");
        }
    }
    const auto kind = j.value("kind", std::string("constant"));
    const double a = j.at("value").get<double>();
    const double b = j.value("value2", a);
    if (kind == "constant") return phantom::FieldSpec::constant(a);
    if (kind == "linear_gradient") return phantom::FieldSpec::gradient(a, b);
    if (kind == "two_region") return phantom::FieldSpec::two_region(a, b);
    throw ArgumentError("setting '" + key + "': unknown field kind '" + kind + "'");
}

void run_phantom(const Settings& s, const std::string& out_dir) {
    phantom::PhantomConfig cfg;
    const auto dims = triple(s.values().at("dims"), "dims");
    for (double d : dims)
        if (d < 1 || d != std::floor(d)) throw ArgumentError("dims must be positive integers");
    cfg.dims = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])};
    const auto sp = triple(s.values().at("spacing"), "spacing");
    cfg.spacing = VoxelSpacing(sp[0], sp[1], sp[2]);
    cfg.bvalues = s.get<std::vector<double>>("bvalues");
    cfg.s0 = field_from_json(s.values().at("s0"), "s0");
    cfg.f = field_from_json(s.values().at("f"), "f");
    cfg.d_star = field_from_json(s.values().at("d_star"), "d_star");
    cfg.d = field_from_json(s.values().at("d"), "d");
    cfg.mask_fraction = s.get<double>("mask_fraction");
    cfg.noise = phantom::parse_noise_model(s.get<std::string>("noise"));
    const double snr = s.get<double>("snr");
    cfg.snr = snr > 0.0 ? snr : std::numeric_limits<double>::infinity();
    if (cfg.noise != phantom::NoiseModel::None && !(snr > 0.0)) throw ArgumentError("noise requires snr > 0");
    cfg.seed = s.get<std::uint64_t>("seed");

    const auto bundle = phantom::make_phantom(cfg);
    const fs::path dir(out_dir);
    ensure_dir(dir);
    nifti::write_series(bundle.series, dir / "series.nii");
    nifti::write_bvals(bundle.series.bvalues(), dir / "series.bval");
    nifti::write_mask(bundle.mask, dir / "mask.nii");
    nifti::write_volume(bundle.truth.s0, dir / "truth_s0.nii");
    nifti::write_volume(bundle.truth.f, dir / "truth_f.nii");
    nifti::write_volume(bundle.truth.d_star, dir / "truth_d_star.nii");
    nifti::write_volume(bundle.truth.adc, dir / "truth_adc.nii");
    write_json(dir / "manifest.json", json{{"command", "phantom"},
                                           {"config", s.values()},
                                           {"mask_voxels", bundle.mask.voxel_count()},
                                           {"mask_volume_ml", mask_volume_ml(bundle.mask)}});
}

// ---------------------------------------------------------------------------
// fit

unsigned resolve_threads(int requested) {
    if (requested > 0) return static_cast<unsigned>(requested);
    if (const char* env = std::getenv("IVIMLAB_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
        throw ArgumentError(std::string("IVIMLAB_THREADS must be a positive integer, got '") + env + "'");
    }
    return default_thread_count();
}

void run_fit(const Settings& s, const std::string& series_path, const std::string& mask_path, const std::string& out_dir) {
    IvimFitConfig cfg;
    cfg.b_threshold = s.get<double>("b_threshold");
    cfg.adc_lo = s.get<double>("adc_lo");
    cfg.adc_hi = s.get<double>("adc_hi");
    cfg.d_star_hi = s.get<double>("d_star_hi");
    cfg.solver.max_iter = s.get<int>("max_iter");
    cfg.validate();
    const auto bins = s.get<int>("entropy_bins");
    if (bins < 1) throw ArgumentError("entropy_bins must be at least 1");

    std::string bval = s.get<std::string>("bval");
    if (bval.empty()) bval = nifti::bval_sidecar(series_path).string();
    if (!fs::exists(series_path)) throw IoError("series image not found: " + series_path);
    if (!fs::exists(bval)) throw IoError("b-value file not found: " + bval);
    if (!fs::exists(mask_path)) throw IoError("mask image not found: " + mask_path);

    const auto series = average_by_bvalue(nifti::read_series(series_path, bval));
    const auto mask = nifti::read_mask(mask_path);
    const unsigned threads = resolve_threads(s.get<int>("threads"));
    const auto result = fit_volume(series, mask, cfg, threads);

    const fs::path dir(out_dir);
    ensure_dir(dir);
    nifti::write_volume(result.maps.s0, dir / "s0.nii");
    nifti::write_volume(result.maps.f, dir / "f.nii");
    nifti::write_volume(result.maps.d_star, dir / "d_star.nii");
    nifti::write_volume(result.maps.adc, dir / "adc.nii");
    nifti::write_volume(result.maps.residual, dir / "residual.nii");

    const auto summary = summarize(result.maps, static_cast<std::size_t>(bins));
    const auto row = report::make_row(s.get<std::string>("subject"), fgr::parse_group(s.get<std::string>("group")),
                                      report::parse_source(s.get<std::string>("source")),
                                      parse_fusion_strategy(s.get<std::string>("fusion")), summary);
    write_text(dir / "summary.csv", csv::format({report::summary_header(), report::format_row(row)}));

    auto stats_json = [&](const ParamSummary& p) {
        return json{{"mean", p.mean}, {"sd", p.sd}, {"count", p.count}};
    };
    json log{{"command", "fit"},
             {"config", s.values()},
             {"inputs", {{"series", series_path}, {"bval", bval}, {"mask", mask_path}}},
             {"voxels_fitted", result.log.voxels_fitted},
             {"voxels_failed", result.log.voxels_failed},
             {"boundary_hits", result.log.boundary_hits},
             {"volume_ml", summary.volume_ml},
             {"empty_summary", summary.empty}};
    if (!summary.empty) {
        log["summary"] = {{"s0", stats_json(summary.s0)},
                          {"f", stats_json(summary.f)},
                          {"d_star", stats_json(summary.d_star)},
                          {"adc", stats_json(summary.adc)},
                          {"residual", stats_json(summary.residual)}};
    }
    log["wall_time"] = result.log.wall_time;
    write_json(dir / "fit_log.json", log);
}

// ---------------------------------------------------------------------------
// fuse / metrics

void run_fuse(const Settings& s, const std::vector<std::string>& inputs, const std::string& out) {
    if (inputs.empty()) throw ArgumentError("fuse needs at least one mask");
    const auto strategy = parse_fusion_strategy(s.get<std::string>("strategy"));
    std::vector<BinaryMask> masks;
    for (const auto& p : inputs) masks.push_back(nifti::read_mask(p));
    nifti::write_mask(fuse(masks, strategy), out);
}

void run_metrics(const std::string& a_path, const std::string& b_path, const std::string& name, const std::string& out) {
    const auto a = nifti::read_mask(a_path);
    const auto b = nifti::read_mask(b_path);
    const double d = dice(a, b);
    const double hd = hausdorff(a, b);
    const std::string text = csv::format({{"case", "dice", "hd_mm", "vol_a_ml", "vol_b_ml"},
                                          {name, csv::number(d), csv::number(hd), csv::number(mask_volume_ml(a)),
                                           csv::number(mask_volume_ml(b))}});
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text(out, text);
    }
}

// ---------------------------------------------------------------------------
// report

void run_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
    if (inputs.empty()) throw ArgumentError("report needs at least one summary CSV");
    std::vector<report::SummaryRow> rows;
    for (const auto& p : inputs) {
        auto part = report::parse_summaries(read_text(p));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto rep = report::build(rows);
    const fs::path dir(out_dir);
    ensure_dir(dir);
    write_text(dir / "table3.csv", csv::format(report::table3_rows(rep)));
    write_text(dir / "table4.csv", csv::format(report::table4_rows(rep)));
    write_text(dir / "cv_agreement.csv", csv::format(report::cv_agreement_rows(rep)));
    json mean_p = json::object();
    for (const auto& [strategy, p] : rep.mean_t_p) mean_p[to_string(strategy)] = p;
    write_json(dir / "report.json", json{{"command", "report"},
                                         {"config", {{"inputs", inputs}}},
                                         {"rows", rows.size()},
                                         {"mean_paired_t_p", mean_p},
                                         {"outputs", {"table3.csv", "table4.csv", "cv_agreement.csv"}}});
}

// ---------------------------------------------------------------------------
// classify

std::vector<fgr::SubjectRecord> read_subjects(const std::string& path) {
    const auto rows = csv::parse(read_text(path));
    if (rows.empty()) throw FormatError(path + ": empty subject table");
    const auto& header = rows.front();
    auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError(path + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t id = col("id"), ga = col("ga"), group = col("group"), tlv = col("tlv_ml");
    std::vector<fgr::SubjectRecord> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != header.size()) throw FormatError(path + ": row " + std::to_string(r + 1) + " has wrong field count");
        fgr::SubjectRecord s{row[id], fgr::parse_ga(row[ga]), fgr::parse_group(row[group]),
                             csv::to_double(row[tlv], "tlv_ml")};
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

void run_classify(const std::string& train_path, const std::string& test_path, const std::string& out) {
    const auto train = read_subjects(train_path);
    const auto test = read_subjects(test_path);
    const auto rep = fgr::train_and_evaluate(train, test);

    json predictions = json::array();
    for (std::size_t i = 0; i < test.size(); ++i) {
        predictions.push_back({{"id", test[i].id},
                               {"z", rep.test_scores[i]},
                               {"predicted", fgr::to_string(rep.test_predictions[i])},
                               {"truth", fgr::to_string(test[i].group)}});
    }
    const bool expected_direction = rep.training.polarity == fgr::Polarity::LowerIsPositive;
    json j{{"command", "classify"},
           {"config", {{"train", train_path}, {"test", test_path}}},
           {"n_train", train.size()},
           {"n_test", test.size()},
           {"control_mean", rep.reference.mean},
           {"control_sd", rep.reference.sd},
           {"auc", rep.training.auc},
           {"youden_threshold", rep.training.youden_threshold},
           {"youden_j", rep.training.youden_j},
           {"polarity", fgr::to_string(rep.training.polarity)},
           {"confusion_matrix", {{"tp", rep.test.tp}, {"fp", rep.test.fp}, {"tn", rep.test.tn}, {"fn", rep.test.fn}}},
           {"accuracy", rep.test.accuracy()},
           {"predictions", predictions},
           {"note", expected_direction
                        ? "polarity chosen by training AUC: lower oeTLV z-scores indicate FGR (smaller lungs)"
                        : "polarity chosen by training AUC: higher oeTLV z-scores indicate FGR, opposite to the "
                          "expected lung volume reduction in FGR"}};
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_json(out, j);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ivimlab: IVIM fitting, mask fusion, segmentation metrics and oeTLV classification"};
    app.require_subcommand(1);

    // phantom
    auto* ph = app.add_subcommand("phantom", "Write a synthetic DWI phantom with known IVIM truth");
    Settings ph_set(json{{"dims", {8, 32, 32}},
                         {"spacing", {7.20, 2.07, 2.07}},
                         {"bvalues", phantom::default_bvalues()},
                         {"s0", 100.0},
                         {"f", 0.3},
                         {"d_star", 0.05},
                         {"d", 0.002},
                         {"mask_fraction", 0.8},
                         {"noise", "none"},
                         {"snr", 0.0},
                         {"seed", 1}});
    std::string ph_config, ph_out;
    ph->add_option("--config", ph_config, "JSON settings file");
    ph->add_option("--out", ph_out, "Output directory")->required();
    ph_set.bind<std::vector<double>>(ph, "--dims", "dims", "Grid size z,y,x")->delimiter(',');
    ph_set.bind<std::vector<double>>(ph, "--spacing", "spacing", "Voxel spacing z,y,x in mm")->delimiter(',');
    ph_set.bind<std::vector<double>>(ph, "--bvalues", "bvalues", "b-values in s/mm^2")->delimiter(',');
    ph_set.bind<double>(ph, "--s0", "s0", "Constant S0");
    ph_set.bind<double>(ph, "--f", "f", "Constant perfusion fraction");
    ph_set.bind<double>(ph, "--d-star", "d_star", "Constant D* (mm^2/s)");
    ph_set.bind<double>(ph, "--d", "d", "Constant D (mm^2/s)");
    ph_set.bind<double>(ph, "--mask-fraction", "mask_fraction", "Ellipsoid semi-axis fraction");
    ph_set.bind<std::string>(ph, "--noise", "noise", "none, gaussian or rician");
    ph_set.bind<double>(ph, "--snr", "snr", "Signal-to-noise ratio at b=0");
    ph_set.bind<std::uint64_t>(ph, "--seed", "seed", "Noise seed");

    // fit
    auto* fit = app.add_subcommand("fit", "Two-step voxel-wise IVIM fit inside a mask");
    Settings fit_set(json{{"bval", ""},
                          {"b_threshold", 100.0},
                          {"adc_lo", 1e-5},
                          {"adc_hi", 1e-1},
                          {"d_star_hi", 0.5},
                          {"max_iter", 200},
                          {"entropy_bins", 64},
                          {"threads", 0},
                          {"subject", "subject"},
                          {"group", "Control"},
                          {"source", "manual"},
                          {"fusion", "avg"}});
    std::string fit_config, fit_series, fit_mask, fit_out;
    fit->add_option("series", fit_series, "4D DWI series (.nii)")->required();
    fit->add_option("mask", fit_mask, "Lung mask (.nii)")->required();
    fit->add_option("--config", fit_config, "JSON settings file");
    fit->add_option("--out", fit_out, "Output directory")->required();
    fit_set.bind<std::string>(fit, "--bval", "bval", "b-value sidecar (default: series basename + .bval)");
    fit_set.bind<double>(fit, "--b-threshold", "b_threshold", "ADC uses b strictly above this");
    fit_set.bind<double>(fit, "--adc-lo", "adc_lo", "Lower ADC bound (mm^2/s)");
    fit_set.bind<double>(fit, "--adc-hi", "adc_hi", "Upper ADC bound (mm^2/s)");
    fit_set.bind<double>(fit, "--d-star-hi", "d_star_hi", "Upper D* bound (mm^2/s, inf disables)");
    fit_set.bind<int>(fit, "--max-iter", "max_iter", "Solver iteration limit");
    fit_set.bind<int>(fit, "--entropy-bins", "entropy_bins", "Histogram bins for entropy");
    fit_set.bind<int>(fit, "--threads", "threads", "Worker threads (0: IVIMLAB_THREADS or all cores)");
    fit_set.bind<std::string>(fit, "--subject", "subject", "Subject id for summary.csv");
    fit_set.bind<std::string>(fit, "--group", "group", "FGR or Control");
    fit_set.bind<std::string>(fit, "--source", "source", "manual or automatic");
    fit_set.bind<std::string>(fit, "--fusion", "fusion", "olp, avg or lc");

    // fuse
    auto* fu = app.add_subcommand("fuse", "Fuse per-frame masks into one");
    Settings fu_set(json{{"strategy", "avg"}});
    std::vector<std::string> fu_inputs;
    std::string fu_out, fu_config;
    fu->add_option("masks", fu_inputs, "Input masks (.nii)")->required();
    fu->add_option("--config", fu_config, "JSON settings file");
    fu->add_option("--out", fu_out, "Output mask (.nii)")->required();
    fu_set.bind<std::string>(fu, "--strategy", "strategy", "olp, avg or lc (case-insensitive)");

    // metrics
    auto* me = app.add_subcommand("metrics", "Dice and Hausdorff distance between two masks");
    std::string me_a, me_b, me_case = "case", me_out;
    me->add_option("a", me_a, "Reference mask")->required();
    me->add_option("b", me_b, "Compared mask")->required();
    me->add_option("--case", me_case, "Case label for the CSV row");
    me->add_option("--out", me_out, "Output CSV (default: stdout)");

    // report
    auto* rp = app.add_subcommand("report", "Paired tests and CV tables across mask sources");
    std::vector<std::string> rp_inputs;
    std::string rp_out;
    rp->add_option("summaries", rp_inputs, "summary.csv files from fit")->required();
    rp->add_option("--out", rp_out, "Output directory")->required();

    // classify
    auto* cl = app.add_subcommand("classify", "oeTLV z-score ROC/Youden classifier");
    std::string cl_train, cl_test, cl_out;
    cl->add_option("--train", cl_train, "Training subjects CSV {id,ga,group,tlv_ml}")->required();
    cl->add_option("--test", cl_test, "Test subjects CSV")->required();
    cl->add_option("--out", cl_out, "Output JSON report (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (ph->parsed()) {
            ph_set.load_config(ph_config);
            ph_set.apply_overrides();
            run_phantom(ph_set, ph_out);
        } else if (fit->parsed()) {
            fit_set.load_config(fit_config);
            fit_set.apply_overrides();
            run_fit(fit_set, fit_series, fit_mask, fit_out);
        } else if (fu->parsed()) {
            fu_set.load_config(fu_config);
            fu_set.apply_overrides();
            run_fuse(fu_set, fu_inputs, fu_out);
        } else if (me->parsed()) {
            run_metrics(me_a, me_b, me_case, me_out);
        } else if (rp->parsed()) {
            run_report(rp_inputs, rp_out);
        } else if (cl->parsed()) {
            run_classify(cl_train, cl_test, cl_out);
        }
    } catch (const ivimlab::Error& e) {
        std::cerr << "ivimlab: error: " << e.what() << "\n";
        return kExitInput;
    } catch (const json::exception& e) {
        std::cerr << "ivimlab: error: " << e.what() << "\n";
        return kExitInput;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "ivimlab: error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "ivimlab: internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return 0;
}
