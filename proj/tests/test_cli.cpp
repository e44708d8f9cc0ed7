#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ivimlab/ivimlab.hpp"
#include "json.hpp"
#include "nifti_fixtures.hpp"
#include "support.hpp"

using namespace ivimlab;
using nlohmann::json;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" IVIMLAB_CLI "\" " + args + " >\"" + out.string() +
                            "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST(Cli, UsageErrors) {
    TempDir dir("cli");
    EXPECT_EQ(cli(dir, "").code, 2);
    EXPECT_EQ(cli(dir, "frobnicate").code, 2);
    EXPECT_EQ(cli(dir, "fit").code, 2);
    EXPECT_EQ(cli(dir, "--help").code, 0);
    EXPECT_EQ(cli(dir, "phantom --out " + q(dir / "p") + " --seed notanumber").code, 2);
}

TEST(Cli, PhantomThenFitRecoversTruth) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --d-star 0.1").code, 0);
    for (const char* f : {"series.nii", "series.bval", "mask.nii", "truth_s0.nii", "truth_f.nii", "truth_d_star.nii",
                          "truth_adc.nii", "manifest.json"})
        EXPECT_TRUE(fs::exists(dir / "ph" / f)) << f;
    const auto manifest = json::parse(slurp(dir / "ph" / "manifest.json"));
    EXPECT_EQ(manifest["config"]["d_star"], 0.1);
    EXPECT_EQ(manifest["config"]["noise"], "none");

    const auto r = cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii") + " --out " +
                                q(dir / "fit") + " --threads 2");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto mask = nifti::read_mask(dir / "ph" / "mask.nii");
    for (const char* name : {"f", "d_star", "adc", "s0"}) {
        const auto got = nifti::read_volume(dir / "fit" / (std::string(name) + ".nii"));
        const auto want = nifti::read_volume(dir / "ph" / ("truth_" + std::string(name) + ".nii"));
        double worst = 0.0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (!mask.contains(i)) {
                EXPECT_TRUE(std::isnan(got[i]));
                continue;
            }
            worst = std::max(worst, std::abs(got[i] - want[i]) / want[i]);
        }
        EXPECT_LT(worst, 1e-5) << name;
    }
    const auto log = json::parse(slurp(dir / "fit" / "fit_log.json"));
    EXPECT_EQ(log["voxels_fitted"], mask.voxel_count());
    EXPECT_EQ(log["voxels_failed"], 0);
    EXPECT_TRUE(log.contains("boundary_hits"));
    EXPECT_TRUE(log.contains("wall_time"));
    EXPECT_EQ(log["config"]["threads"], 2);
    EXPECT_EQ(log["config"]["b_threshold"], 100.0);
    const auto rows = report::parse_summaries(slurp(dir / "fit" / "summary.csv"));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NEAR(rows[0].value("f_mean"), 0.3, 1e-5);
}

TEST(Cli, FitIsDeterministic) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 3,12,12 --noise gaussian --snr 30 --seed 4").code, 0);
    const std::string in = q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii");
    ASSERT_EQ(cli(dir, "fit " + in + " --out " + q(dir / "a") + " --threads 1").code, 0);
    ASSERT_EQ(cli(dir, "fit " + in + " --out " + q(dir / "b"), "IVIMLAB_THREADS=3").code, 0);
    for (const char* f : {"s0.nii", "f.nii", "d_star.nii", "adc.nii", "residual.nii", "summary.csv"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    auto a = json::parse(slurp(dir / "a" / "fit_log.json"));
    auto b = json::parse(slurp(dir / "b" / "fit_log.json"));
    for (auto* j : {&a, &b}) {
        j->erase("wall_time");
        j->erase("config");
    }
    EXPECT_EQ(a, b);
}

TEST(Cli, MissingBValNamesThePath) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    fs::remove(dir / "ph" / "series.bval");
    const auto r = cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii") + " --out " + q(dir / "fit"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find((dir / "ph" / "series.bval").string()), std::string::npos) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, ExplicitBValPath) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    fs::rename(dir / "ph" / "series.bval", dir / "b.txt");
    const auto r = cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii") + " --bval " +
                                q(dir / "b.txt") + " --out " + q(dir / "fit"));
    EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, EmptyMaskFitsNothing) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    const auto m = nifti::read_mask(dir / "ph" / "mask.nii");
    nifti::write_mask(BinaryMask(m.dims(), m.spacing()), dir / "empty.nii");
    const auto r = cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "empty.nii") + " --out " + q(dir / "fit"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto log = json::parse(slurp(dir / "fit" / "fit_log.json"));
    EXPECT_EQ(log["voxels_fitted"], 0);
    EXPECT_EQ(log["empty_summary"], true);
}

TEST(Cli, GridMismatchIsInputError) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    nifti::write_mask(BinaryMask(Dims{2, 6, 7}, VoxelSpacing{}, 1), dir / "other.nii");
    EXPECT_EQ(cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "other.nii") + " --out " + q(dir / "fit")).code, 2);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
    TempDir dir("cli");
    write_file(dir / "cfg.json", R"({"dims": [2, 8, 8], "f": 0.25, "seed": 9})");
    ASSERT_EQ(cli(dir, "phantom --config " + q(dir / "cfg.json") + " --f 0.2 --out " + q(dir / "ph")).code, 0);
    const auto m = json::parse(slurp(dir / "ph" / "manifest.json"));
    EXPECT_EQ(m["config"]["f"], 0.2);
    EXPECT_EQ(m["config"]["seed"], 9);
    EXPECT_EQ(m["config"]["dims"], json::array({2, 8, 8}));
    EXPECT_EQ(nifti::read_mask(dir / "ph" / "mask.nii").dims(), (Dims{2, 8, 8}));
    const auto f = nifti::read_volume(dir / "ph" / "truth_f.nii");
    EXPECT_FLOAT_EQ(static_cast<float>(f[f.dims().index(1, 4, 4)]), 0.2f);
}

TEST(Cli, ConfigErrors) {
    TempDir dir("cli");
    write_file(dir / "unknown.json", R"({"dims": [2, 8, 8], "colour": "blue"})");
    auto r = cli(dir, "phantom --config " + q(dir / "unknown.json") + " --out " + q(dir / "ph"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("colour"), std::string::npos);
    write_file(dir / "bad.json", "{not json");
    EXPECT_EQ(cli(dir, "phantom --config " + q(dir / "bad.json") + " --out " + q(dir / "ph")).code, 2);
    write_file(dir / "type.json", R"({"snr": "loud"})");
    EXPECT_EQ(cli(dir, "phantom --config " + q(dir / "type.json") + " --out " + q(dir / "ph")).code, 2);
    EXPECT_EQ(cli(dir, "phantom --config " + q(dir / "missing.json") + " --out " + q(dir / "ph")).code, 2);
    write_file(dir / "fit.json", R"({"adc_lo": 0.5, "adc_hi": 0.1})");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    EXPECT_EQ(cli(dir, "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii") + " --config " +
                           q(dir / "fit.json") + " --out " + q(dir / "fit"))
                  .code,
              2);
}

TEST(Cli, BadThreadEnvironment) {
    TempDir dir("cli");
    ASSERT_EQ(cli(dir, "phantom --out " + q(dir / "ph") + " --dims 2,6,6").code, 0);
    const std::string args = "fit " + q(dir / "ph" / "series.nii") + " " + q(dir / "ph" / "mask.nii") + " --out " + q(dir / "fit");
    EXPECT_EQ(cli(dir, args, "IVIMLAB_THREADS=many").code, 2);
    EXPECT_EQ(cli(dir, args + " --threads 1", "IVIMLAB_THREADS=many").code, 0);
}

TEST(Cli, FuseStrategies) {
    TempDir dir("cli");
    const Dims d{1, 1, 4};
    BinaryMask a(d, {}), b(d, {}), c(d, {});
    a.data() = {1, 1, 1, 0};
    b.data() = {1, 1, 0, 0};
    c.data() = {1, 0, 0, 1};
    nifti::write_mask(a, dir / "a.nii");
    nifti::write_mask(b, dir / "b.nii");
    nifti::write_mask(c, dir / "c.nii");
    const std::string three = q(dir / "a.nii") + " " + q(dir / "b.nii") + " " + q(dir / "c.nii");
    ASSERT_EQ(cli(dir, "fuse " + three + " --strategy AVG --out " + q(dir / "avg.nii")).code, 0);
    EXPECT_EQ(nifti::read_mask(dir / "avg.nii").data(), (std::vector<std::uint8_t>{1, 1, 0, 0}));
    ASSERT_EQ(cli(dir, "fuse " + three + " --strategy olp --out " + q(dir / "olp.nii")).code, 0);
    EXPECT_EQ(nifti::read_mask(dir / "olp.nii").data(), (std::vector<std::uint8_t>{1, 0, 0, 0}));
    ASSERT_EQ(cli(dir, "fuse " + three + " --strategy Lc --out " + q(dir / "lc.nii")).code, 0);
    EXPECT_EQ(nifti::read_mask(dir / "lc.nii").data(), (std::vector<std::uint8_t>{1, 1, 1, 1}));
    for (const char* s : {"olp", "avg", "lc"}) {
        ASSERT_EQ(cli(dir, "fuse " + q(dir / "c.nii") + " --strategy " + s + " --out " + q(dir / "one.nii")).code, 0);
        EXPECT_EQ(slurp(dir / "one.nii"), slurp(dir / "c.nii"));
    }
    EXPECT_EQ(cli(dir, "fuse " + three + " --strategy median --out " + q(dir / "x.nii")).code, 2);
    nifti::write_mask(BinaryMask(Dims{1, 1, 5}, {}), dir / "wide.nii");
    EXPECT_EQ(cli(dir, "fuse " + q(dir / "a.nii") + " " + q(dir / "wide.nii") + " --out " + q(dir / "x.nii")).code, 2);
}

TEST(Cli, MetricsMatchLibrary) {
    TempDir dir("cli");
    const auto m = phantom::ellipsoid_mask(Dims{8, 32, 32}, VoxelSpacing{7.2, 2.07, 2.07}, 0.8);
    nifti::write_mask(m, dir / "m.nii");
    nifti::write_mask(dilate(m, 1), dir / "d.nii");
    auto r = cli(dir, "metrics " + q(dir / "m.nii") + " " + q(dir / "m.nii") + " --case self");
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = csv::parse(r.out);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], (csv::Row{"case", "dice", "hd_mm", "vol_a_ml", "vol_b_ml"}));
    EXPECT_EQ(rows[1][0], "self");
    EXPECT_EQ(rows[1][1], "1");
    EXPECT_EQ(rows[1][2], "0");

    r = cli(dir, "metrics " + q(dir / "m.nii") + " " + q(dir / "d.nii") + " --out " + q(dir / "metrics.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    rows = csv::parse(slurp(dir / "metrics.csv"));
    // Compare against the library on the file-rounded masks.
    const auto a = nifti::read_mask(dir / "m.nii");
    const auto b = nifti::read_mask(dir / "d.nii");
    EXPECT_EQ(csv::to_double(rows[1][1], "dice"), dice(a, b));
    EXPECT_EQ(csv::to_double(rows[1][2], "hd"), hausdorff(a, b));
    EXPECT_EQ(csv::to_double(rows[1][3], "va"), mask_volume_ml(a));
    EXPECT_EQ(csv::to_double(rows[1][4], "vb"), mask_volume_ml(b));

    nifti::write_mask(BinaryMask(m.dims(), m.spacing()), dir / "empty.nii");
    r = cli(dir, "metrics " + q(dir / "m.nii") + " " + q(dir / "empty.nii"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("empty"), std::string::npos);
}

TEST(Cli, MalformedNiftiIsInputError) {
    TempDir dir("cli");
    nifti::write_mask(BinaryMask(Dims{5, 4, 3}, VoxelSpacing{2.0, 1.5, 1.5}, 1), dir / "ok.nii");
    for (const auto& [name, bytes] : testing_support::malformed_niftis()) {
        write_file(dir / "bad.nii", bytes);
        const auto r = cli(dir, "metrics " + q(dir / "ok.nii") + " " + q(dir / "bad.nii"));
        EXPECT_EQ(r.code, 2) << name << ": " << r.err;
    }
}

namespace {

std::string summary_csv(const std::vector<report::SummaryRow>& rows) {
    std::vector<csv::Row> t{report::summary_header()};
    for (const auto& r : rows) t.push_back(report::format_row(r));
    return csv::format(t);
}

report::SummaryRow fake_row(int s, report::Source src, FusionStrategy fu) {
    report::SummaryRow r{"s" + std::to_string(s), s % 2 ? fgr::Group::Fgr : fgr::Group::Control, src, fu, {}};
    r.values["voxels_fitted"] = 10;
    int k = 1;
    for (auto m : report::kMeanMetrics) r.values[std::string(m)] = (1.0 + s) * k++;
    for (auto m : report::kVariabilityMetrics) r.values[std::string(m)] = 0.01 * (1.0 + s) * k++;
    return r;
}

}  // namespace

TEST(Cli, ReportOnIdenticalSources) {
    TempDir dir("cli");
    std::vector<report::SummaryRow> man, aut;
    for (int s = 0; s < 4; ++s)
        for (auto fu : report::kStrategies) {
            man.push_back(fake_row(s, report::Source::Manual, fu));
            aut.push_back(fake_row(s, report::Source::Automatic, fu));
        }
    write_file(dir / "man.csv", summary_csv(man));
    write_file(dir / "aut.csv", summary_csv(aut));
    const auto r = cli(dir, "report " + q(dir / "man.csv") + " " + q(dir / "aut.csv") + " --out " + q(dir / "rep"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t3 = csv::parse(slurp(dir / "rep" / "table3.csv"));
    for (std::size_t i = 1; i < t3.size(); ++i)
        for (std::size_t c = 2; c < 5; ++c) EXPECT_EQ(t3[i][c], "1") << t3[i][0];
    EXPECT_TRUE(fs::exists(dir / "rep" / "table4.csv"));
    EXPECT_TRUE(fs::exists(dir / "rep" / "cv_agreement.csv"));
    const auto j = json::parse(slurp(dir / "rep" / "report.json"));
    EXPECT_EQ(j["rows"], 24);
    EXPECT_EQ(j["config"]["inputs"].size(), 2u);
}

TEST(Cli, ReportSingleSubjectIsInputError) {
    TempDir dir("cli");
    std::vector<report::SummaryRow> rows{fake_row(0, report::Source::Manual, FusionStrategy::Avg),
                                         fake_row(0, report::Source::Automatic, FusionStrategy::Avg)};
    write_file(dir / "one.csv", summary_csv(rows));
    EXPECT_EQ(cli(dir, "report " + q(dir / "one.csv") + " --out " + q(dir / "rep")).code, 2);
    write_file(dir / "junk.csv", "not,a,summary\r\n");
    EXPECT_EQ(cli(dir, "report " + q(dir / "junk.csv") + " --out " + q(dir / "rep")).code, 2);
}

namespace {

std::string subjects_csv(int n, int n_fgr, int offset) {
    std::string s = "id,ga,group,tlv_ml\r\n";
    for (int i = 0; i < n; ++i) {
        const double ga = 22.0 + (i * 13 + offset) % 14;
        const bool fgr = i < n_fgr;
        const double tlv = fgr::expected_tlv(ga) * (fgr ? 0.5 : 1.0 + 0.01 * (i % 5));
        s += "p" + std::to_string(offset + i) + "," + csv::number(ga) + "," + (fgr ? "FGR" : "Control") + "," +
             csv::number(tlv) + "\r\n";
    }
    return s;
}

}  // namespace

TEST(Cli, ClassifySeparableCohort) {
    TempDir dir("cli");
    write_file(dir / "train.csv", subjects_csv(23, 8, 0));
    write_file(dir / "test.csv", subjects_csv(6, 3, 100));
    const auto start = std::chrono::steady_clock::now();
    const auto r = cli(dir, "classify --train " + q(dir / "train.csv") + " --test " + q(dir / "test.csv") + " --out " +
                                q(dir / "cls.json"));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(secs, 1.0);
    const auto j = json::parse(slurp(dir / "cls.json"));
    EXPECT_EQ(j["auc"], 1.0);
    EXPECT_EQ(j["accuracy"], 1.0);
    EXPECT_EQ(j["polarity"], "lower_is_fgr");
    EXPECT_EQ(j["confusion_matrix"]["tp"], 3);
    EXPECT_EQ(j["confusion_matrix"]["tn"], 3);
    for (const char* k : {"control_mean", "control_sd", "youden_threshold", "note"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Cli, ClassifyAcceptsWeeksPlusDays) {
    TempDir dir("cli");
    write_file(dir / "train.csv",
               "id,ga,group,tlv_ml\r\na,28+2,FGR,20\r\nb,30+1,Control,57\r\nc,27,Control,41\r\nd,31+6,FGR,30\r\n");
    const auto r = cli(dir, "classify --train " + q(dir / "train.csv") + " --test " + q(dir / "train.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["n_train"], 4);
}

TEST(Cli, ClassifyErrors) {
    TempDir dir("cli");
    write_file(dir / "one.csv", subjects_csv(5, 0, 0));
    write_file(dir / "test.csv", subjects_csv(4, 2, 50));
    EXPECT_EQ(cli(dir, "classify --train " + q(dir / "one.csv") + " --test " + q(dir / "test.csv")).code, 2);
    write_file(dir / "cols.csv", "id,ga,tlv\r\na,30,50\r\n");
    EXPECT_EQ(cli(dir, "classify --train " + q(dir / "cols.csv") + " --test " + q(dir / "test.csv")).code, 2);
    write_file(dir / "ga.csv", "id,ga,group,tlv_ml\r\na,50,FGR,20\r\nb,30,Control,50\r\nc,31,Control,55\r\n");
    EXPECT_EQ(cli(dir, "classify --train " + q(dir / "ga.csv") + " --test " + q(dir / "test.csv")).code, 2);
    EXPECT_EQ(cli(dir, "classify --train " + q(dir / "nope.csv") + " --test " + q(dir / "test.csv")).code, 2);
}
