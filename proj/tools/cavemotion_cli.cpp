// Command-line front end: calibrate, dataset, train, run, report.

#include "cave/calibration.hpp"
#include "cave/dataset.hpp"
#include "cave/pipeline.hpp"
#include "cave/recognition.hpp"
#include "cave/scene.hpp"
#include "cave/transport.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitGateFailure = 3;
constexpr int kExitRuntime = 4;

cave::CaveLayout layout_from_option(const std::string& path) {
    return path.empty() ? cave::default_layout() : cave::load_layout(path);
}

struct CalibrateOptions {
    std::string layout_file;
    std::string correspondence_dir;  // optional: ingest cam<i>.txt files
    std::string out_dir = "out";
    double sigma_px = 0.0;
    double gate_rmse_px = 1.0;
    int markers_per_screen = 8;
    double marker_size_m = 0.35;
    double margin_m = 0.15;
    std::uint64_t seed = 42;
};

int cmd_calibrate(const CalibrateOptions& opt) {
    const cave::CaveLayout layout = layout_from_option(opt.layout_file);
    const auto cameras = cave::default_camera_rig(layout);
    std::filesystem::create_directories(opt.out_dir);

    std::vector<cave::CalibrationResult> results;
    std::vector<std::pair<int, std::array<cave::AxisSegment, 3>>> axes;
    bool gate_failed = false;
    std::printf("camera  corners  rmse_px        max_px         iters  converged\n");
    for (const auto& camera : cameras) {
        std::vector<cave::FiducialCorrespondence> corr;
        if (!opt.correspondence_dir.empty()) {
            corr = cave::load_correspondences(opt.correspondence_dir + "/cam" +
                                              std::to_string(camera.id) + ".txt");
        } else {
            const auto markers = cave::generate_board(layout, opt.markers_per_screen,
                                                      opt.marker_size_m, opt.margin_m);
            std::mt19937_64 rng(cave::split_seed(opt.seed, camera.id));
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (const auto& m : markers) {
                for (int k = 0; k < 4; ++k) {
                    cave::PixelPoint px;
                    try {
                        px = cave::project(camera, m.corners[k]);
                    } catch (const cave::NonPositiveDepth&) {
                        continue;
                    }
                    if (!camera.in_image(px)) continue;
                    cave::FiducialCorrespondence c;
                    c.marker_id = m.marker_id;
                    c.corner_index = k;
                    c.world = m.corners[k];
                    c.pixel = px + opt.sigma_px * cave::Vec2(gauss(rng), gauss(rng));
                    c.confidence = 1.0;
                    corr.push_back(c);
                }
            }
            cave::save_correspondences(
                corr, opt.out_dir + "/correspondences_cam" + std::to_string(camera.id) +
                          ".txt");
        }
        cave::CalibrationResult result =
            cave::calibrate_camera(corr, camera.width, camera.height);
        result.camera.id = camera.id;
        const auto report = cave::reprojection_report(result.camera, corr);
        axes.emplace_back(camera.id, report.axes);
        std::printf("%-7d %-8zu %-14.6g %-14.6g %-6d %s\n", camera.id, corr.size(),
                    result.rmse_px, result.max_err_px, result.iterations,
                    result.converged ? "yes" : "no");
        if (result.rmse_px > opt.gate_rmse_px) gate_failed = true;
        results.push_back(std::move(result));
    }
    cave::save_calibration(results, opt.out_dir + "/calibration.txt");
    cave::save_axis_export(axes, opt.out_dir + "/axes.txt");
    std::printf("wrote %s/calibration.txt\n", opt.out_dir.c_str());
    if (gate_failed) {
        std::fprintf(stderr, "calibration gate failed: rmse above %g px\n",
                     opt.gate_rmse_px);
        return kExitGateFailure;
    }
    return kExitOk;
}

struct DatasetOptions {
    std::string layout_file;
    std::string out_file = "out/dataset.txt";
    int num_samples = 2000;
    double sigma_px = 0.5;
    std::uint64_t seed = 7;
    bool ground_truth_only = false;
};

int cmd_dataset(const DatasetOptions& opt) {
    const cave::CaveLayout layout = layout_from_option(opt.layout_file);
    cave::DatasetParams params;
    params.num_samples = opt.num_samples;
    const auto scripts = cave::default_dataset_scripts(params, opt.seed);
    std::vector<cave::CameraModel> cameras;
    if (!opt.ground_truth_only) cameras = cave::default_camera_rig(layout);
    cave::NoiseModel noise;
    noise.pixel_sigma = opt.sigma_px;
    const cave::Dataset dataset =
        cave::build_dataset(scripts, cameras, noise, opt.seed);
    std::filesystem::create_directories(
        std::filesystem::path(opt.out_file).parent_path());
    cave::save_dataset(dataset, opt.out_file);
    std::map<int, int> per_class;
    for (const auto& s : dataset.samples) per_class[s.label] += 1;
    std::printf("wrote %zu samples to %s (", dataset.samples.size(),
                opt.out_file.c_str());
    for (const auto& [label, count] : per_class) {
        std::printf("%s=%d ", cave::to_string(static_cast<cave::ActionLabel>(label)),
                    count);
    }
    std::printf("train=%zu holdout=%zu)\n", dataset.train_indices.size(),
                dataset.holdout_indices.size());
    return kExitOk;
}

struct TrainOptionsCli {
    std::string dataset_file = "out/dataset.txt";
    std::string model_file = "out/model.txt";
    std::string report_file = "out/train_report.txt";
    int epochs = 80;
    double learning_rate = 0.05;
    double l2 = 1e-4;
    std::uint64_t seed = 1;
};

int cmd_train(const TrainOptionsCli& opt) {
    const cave::Dataset dataset = cave::load_dataset(opt.dataset_file);
    cave::TrainOptions options;
    options.epochs = opt.epochs;
    options.learning_rate = opt.learning_rate;
    options.l2 = opt.l2;
    options.seed = opt.seed;
    cave::TrainReport report;
    const cave::ClassifierModel model = cave::train(dataset, options, &report);
    std::filesystem::create_directories(
        std::filesystem::path(opt.model_file).parent_path());
    cave::save_model(model, opt.model_file);
    cave::save_train_report(report, opt.report_file);
    std::printf("train windows: %d  final loss: %.6f\n", report.train_windows,
                model.final_loss);
    std::printf("holdout accuracy: %.4f over %d samples\n", report.holdout_accuracy,
                report.holdout_windows);
    std::printf("confusion (rows true, cols predicted):\n");
    for (int r = 0; r < 4; ++r) {
        std::printf("%-12s", cave::to_string(static_cast<cave::ActionLabel>(r)));
        for (int c = 0; c < 4; ++c) std::printf(" %5d", report.confusion(r, c));
        std::printf("\n");
    }
    std::printf("wrote %s\n", opt.model_file.c_str());
    return kExitOk;
}

struct RunOptions {
    std::string layout_file;
    std::string calibration_file = "out/calibration.txt";
    std::string model_file = "out/model.txt";
    std::string script_file;
    std::string out_dir = "out/run";
    std::string host = "127.0.0.1";
    int port = 0;  // 0: default_port()
    double speed_mps = 1.0;
    bool max_rate = false;
    double inject_latency_ms = 0;
    bool no_receiver = false;
};

cave::SceneScript default_run_script() {
    // still 2 s, forward 4 s, left 2 s, still 2 s
    cave::SceneScript script;
    script.seed = 99;
    const struct {
        cave::ActionLabel label;
        double start, duration;
    } segs[] = {
        {cave::ActionLabel::StandStill, 0, 2},
        {cave::ActionLabel::StepForward, 2, 4},
        {cave::ActionLabel::StepLeft, 6, 2},
        {cave::ActionLabel::StandStill, 8, 2},
    };
    for (const auto& s : segs) {
        cave::ScriptSegment seg;
        seg.person_id = 0;
        seg.label = s.label;
        seg.start_time = s.start;
        seg.duration = s.duration;
        seg.cadence_hz = 1.5;
        script.segments.push_back(seg);
    }
    script.noise.pixel_sigma = 0.5;
    return script;
}

int cmd_run(const RunOptions& opt) {
    cave::PipelineConfig config;
    config.cameras = cave::load_calibration(opt.calibration_file);
    if (config.cameras.empty()) {
        throw cave::BadCalibrationFile("no cameras in " + opt.calibration_file);
    }
    config.model = cave::load_model(opt.model_file);
    config.script = opt.script_file.empty() ? default_run_script()
                                            : cave::load_script(opt.script_file);
    config.endpoint.host = opt.host;
    config.endpoint.port =
        opt.port > 0 ? static_cast<std::uint16_t>(opt.port) : cave::default_port();
    config.locomotion.speed_mps = opt.speed_mps;
    config.paced = !opt.max_rate;
    config.inject_latency_ms = opt.inject_latency_ms;
    config.out_dir = opt.out_dir;
    std::filesystem::create_directories(opt.out_dir);
    cave::save_script(config.script, opt.out_dir + "/script.txt");

    std::unique_ptr<cave::ReceiverStub> receiver;
    std::thread receiver_thread;
    if (!opt.no_receiver) {
        receiver = std::make_unique<cave::ReceiverStub>(config.endpoint.port);
        receiver_thread = std::thread([&receiver] {
            receiver->run(std::numeric_limits<int>::max(), 1.0);
        });
    }
    const cave::PipelineResult result = cave::run_pipeline(config);
    if (receiver_thread.joinable()) receiver_thread.join();
    if (receiver) receiver->save_trajectory(opt.out_dir + "/trajectory.txt");

    std::printf("frames: produced=%d completed=%d dropped=%d wall=%.2fs (%.1f fps)\n",
                result.frames_produced, result.frames_completed, result.frames_dropped,
                result.wall_seconds, result.frames_completed / result.wall_seconds);
    const char* stage_names[4] = {"observe+track", "reconstruct", "recognize",
                                  "transmit"};
    for (int s = 0; s < 4; ++s) {
        std::printf("stage %-14s mean %.3f ms  max %.3f ms\n", stage_names[s],
                    result.stages[s].mean_ms, result.stages[s].max_ms);
    }
    std::printf("commands sent: %zu  heartbeats: %d  id switches: %d\n",
                result.commands.size(), result.heartbeats_sent, result.id_switches);
    if (result.joint_rmse_frames > 0) {
        std::printf("mean reconstruction rmse: %.4f mm\n",
                    1000.0 * result.mean_joint_rmse_m);
    }
    if (receiver) {
        std::printf("receiver: applied=%d stale=%d decode_errors=%d final=(%.3f, %.3f)\n",
                    receiver->commands_applied(), receiver->stale_dropped(),
                    receiver->decode_errors(), receiver->position().x(),
                    receiver->position().y());
    }
    std::ofstream summary(opt.out_dir + "/summary.txt");
    summary.precision(17);
    summary << "frames_produced " << result.frames_produced << '\n'
            << "frames_completed " << result.frames_completed << '\n'
            << "frames_dropped " << result.frames_dropped << '\n'
            << "wall_seconds " << result.wall_seconds << '\n'
            << "id_switches " << result.id_switches << '\n'
            << "mean_joint_rmse_m " << result.mean_joint_rmse_m << '\n';
    return kExitOk;
}

struct ReportOptions {
    std::string run_dir = "out/run";
    std::string out_file;
};

int cmd_report(const ReportOptions& opt) {
    namespace fs = std::filesystem;
    if (!fs::exists(opt.run_dir + "/commands.txt")) {
        throw cave::Error("run directory has no commands.txt: " + opt.run_dir);
    }
    std::ostringstream report;
    report.precision(10);

    // label timeline from the command log
    std::ifstream commands(opt.run_dir + "/commands.txt");
    std::string line;
    struct Cmd {
        double t;
        std::string label;
    };
    std::vector<Cmd> cmds;
    while (std::getline(commands, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::uint64_t t_us;
        int person;
        std::string label;
        ls >> t_us >> person >> label;
        cmds.push_back({t_us * 1e-6, label});
    }
    report << "commands " << cmds.size() << '\n';
    std::vector<std::pair<double, std::string>> switches;
    for (size_t i = 0; i < cmds.size(); ++i) {
        if (i == 0 || cmds[i].label != cmds[i - 1].label) {
            switches.emplace_back(cmds[i].t, cmds[i].label);
        }
    }
    report << "label_switches " << switches.size() << '\n';
    for (const auto& [t, label] : switches) {
        report << "switch " << t << ' ' << label << '\n';
    }

    // timeline accuracy vs the script, with a grace margin at boundaries
    if (fs::exists(opt.run_dir + "/script.txt")) {
        const cave::SceneScript script = cave::load_script(opt.run_dir + "/script.txt");
        const double grace = 0.25;
        int total = 0, correct = 0, graced = 0;
        for (const auto& c : cmds) {
            const cave::ScriptSegment* seg = nullptr;
            bool near_boundary = false;
            for (const auto& s : script.segments) {
                if (c.t >= s.start_time && c.t < s.start_time + s.duration) seg = &s;
                if (std::abs(c.t - s.start_time) < grace ||
                    std::abs(c.t - (s.start_time + s.duration)) < grace) {
                    near_boundary = true;
                }
            }
            if (!seg) continue;
            if (near_boundary) {
                ++graced;
                continue;
            }
            ++total;
            if (c.label == cave::to_string(seg->label)) ++correct;
        }
        report << "timeline_samples " << total << '\n';
        report << "timeline_graced " << graced << '\n';
        report << "timeline_accuracy "
               << (total > 0 ? static_cast<double>(correct) / total : 0.0) << '\n';
    }

    // tracking id switches per camera per true person
    if (fs::exists(opt.run_dir + "/tracks.txt")) {
        std::ifstream tracks(opt.run_dir + "/tracks.txt");
        std::map<std::pair<int, int>, int> last_id;
        int id_switches = 0;
        long rows = 0;
        while (std::getline(tracks, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            int frame, camera, track_id, person;
            std::string status;
            double x, y, w, h;
            ls >> frame >> camera >> track_id >> status >> x >> y >> w >> h >> person;
            ++rows;
            if (person < 0) continue;
            const auto key = std::make_pair(camera, person);
            const auto it = last_id.find(key);
            if (it != last_id.end() && it->second != track_id) ++id_switches;
            last_id[key] = track_id;
        }
        report << "track_rows " << rows << '\n';
        report << "id_switches " << id_switches << '\n';
    }

    // reconstruction error
    if (fs::exists(opt.run_dir + "/reconstruction_error.txt")) {
        std::ifstream err(opt.run_dir + "/reconstruction_error.txt");
        double sum = 0;
        long n = 0;
        while (std::getline(err, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            int frame, person, joints;
            double rmse;
            ls >> frame >> person >> rmse >> joints;
            sum += rmse;
            ++n;
        }
        report << "reconstruction_frames " << n << '\n';
        report << "mean_reconstruction_rmse_m " << (n > 0 ? sum / n : 0.0) << '\n';
    }

    // latency
    if (fs::exists(opt.run_dir + "/latency.txt")) {
        std::ifstream lat(opt.run_dir + "/latency.txt");
        double total = 0;
        long n = 0;
        int min_fps = 1 << 30, max_fps = 0;
        while (std::getline(lat, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            int frame, fps;
            double a, b, c, d, t;
            ls >> frame >> a >> b >> c >> d >> t >> fps;
            total += t;
            min_fps = std::min(min_fps, fps);
            max_fps = std::max(max_fps, fps);
            ++n;
        }
        report << "mean_total_latency_ms " << (n > 0 ? total / n : 0.0) << '\n';
        if (n > 0) report << "fps_range " << min_fps << ' ' << max_fps << '\n';
    }

    const std::string text = report.str();
    std::fputs(text.c_str(), stdout);
    if (!opt.out_file.empty()) {
        std::ofstream out(opt.out_file);
        out << text;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAVE locomotion pipeline: calibration, synthetic data, action "
                 "recognition and UDP command transport"};
    app.require_subcommand(1);

    CalibrateOptions cal;
    auto* calibrate = app.add_subcommand(
        "calibrate", "Solve all cameras from screen fiducials and validate by "
                     "reprojection");
    calibrate->add_option("--layout", cal.layout_file, "layout file (default built-in)");
    calibrate->add_option("--correspondences", cal.correspondence_dir,
                          "directory with cam<i>.txt correspondence files");
    calibrate->add_option("--out", cal.out_dir, "output directory");
    calibrate->add_option("--sigma", cal.sigma_px, "synthetic pixel noise sigma");
    calibrate->add_option("--gate", cal.gate_rmse_px, "max acceptable rmse (px)");
    calibrate->add_option("--markers", cal.markers_per_screen, "markers per screen");
    calibrate->add_option("--seed", cal.seed, "noise seed");

    DatasetOptions ds;
    auto* dataset = app.add_subcommand("dataset", "Generate the labeled gait dataset");
    dataset->add_option("--layout", ds.layout_file, "layout file");
    dataset->add_option("--out", ds.out_file, "output dataset file");
    dataset->add_option("--samples", ds.num_samples, "sample count");
    dataset->add_option("--sigma", ds.sigma_px, "pixel noise for the synthetic cameras");
    dataset->add_option("--seed", ds.seed, "dataset seed");
    dataset->add_flag("--ground-truth-only", ds.ground_truth_only,
                      "skip the camera/triangulation lift");

    TrainOptionsCli tr;
    auto* train = app.add_subcommand("train", "Train the action classifier");
    train->add_option("--dataset", tr.dataset_file, "dataset file");
    train->add_option("--model", tr.model_file, "output model file");
    train->add_option("--report", tr.report_file, "output training report");
    train->add_option("--epochs", tr.epochs, "training epochs");
    train->add_option("--lr", tr.learning_rate, "learning rate");
    train->add_option("--l2", tr.l2, "L2 regularization");
    train->add_option("--seed", tr.seed, "training seed");

    RunOptions run;
    auto* runc = app.add_subcommand("run", "Run the live pipeline over a scenario");
    runc->add_option("--layout", run.layout_file, "layout file");
    runc->add_option("--calibration", run.calibration_file, "calibration file");
    runc->add_option("--model", run.model_file, "model file");
    runc->add_option("--script", run.script_file, "scenario script (default built-in)");
    runc->add_option("--out", run.out_dir, "run output directory");
    runc->add_option("--host", run.host, "receiver host");
    runc->add_option("--port", run.port, "receiver port (default 47474/env)");
    runc->add_option("--speed", run.speed_mps, "locomotion speed m/s");
    runc->add_flag("--max-rate", run.max_rate, "run unpaced at maximum throughput");
    runc->add_option("--inject-latency", run.inject_latency_ms,
                     "artificial per-frame latency (ms)");
    runc->add_flag("--no-receiver", run.no_receiver, "do not start the receiver stub");

    ReportOptions rep;
    auto* report = app.add_subcommand("report", "Aggregate metrics from a run directory");
    report->add_option("--run", rep.run_dir, "run directory");
    report->add_option("--out", rep.out_file, "also write the report to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(cal);
        if (dataset->parsed()) return cmd_dataset(ds);
        if (train->parsed()) return cmd_train(tr);
        if (runc->parsed()) return cmd_run(run);
        if (report->parsed()) return cmd_report(rep);
    } catch (const cave::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
