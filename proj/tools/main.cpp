#include "elab/pipeline.hpp"
#include "elab/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace elab;

namespace {

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    f >> j;
    return j;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << content;
}

std::vector<int> parse_tokens(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, '+')) out.push_back(std::stoi(tok));
    return out;
}

struct Common {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out = "out";
};

Experiment experiment_from(const Common& c) {
    nlohmann::json j = load_config(c.config_path);
    if (c.seed_set) j["seed"] = c.seed;
    return parse_experiment(j);
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "experiment config JSON");
    cmd->add_option("--seed", c.seed, "RNG seed")->each([&](const std::string&) { c.seed_set = true; });
    cmd->add_option("--out", c.out, "output directory or file");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"miniature diffusion backdoor/erasure testbed"};
    app.require_subcommand(1);

    Common c;

    // world
    auto* cmd_world = app.add_subcommand("world", "build the concept world and write world.json");
    add_common(cmd_world, c);
    cmd_world->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        write_file(c.out, w.to_json().dump(2) + "\n");
        std::cout << "world " << w.hash() << " -> " << c.out << "\n";
    });

    // train
    auto* cmd_train = app.add_subcommand("train", "train the clean base model");
    add_common(cmd_train, c);
    cmd_train->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        Rng rng = Rng(ex.seed).fork(0x7261696eu);
        TrainResult tr = train_base(w, sched, ex.train_cfg, rng);
        write_file(c.out, snapshot_to_json(tr.snapshot).dump());
        std::cout << "base " << tr.snapshot.hash() << " val_eps_mse " << tr.val_eps_mse
                  << " model_oracle_mse " << tr.model_oracle_mse
                  << (tr.converged ? "" : " [non-convergence flagged]") << "\n";
    });

    // poison
    auto* cmd_poison = app.add_subcommand("poison", "inject a backdoor into a snapshot");
    std::string snap_path, attack_name = "disa", trigger_str;
    int target = -1;
    add_common(cmd_poison, c);
    cmd_poison->add_option("--snapshot", snap_path, "input snapshot")->required();
    cmd_poison->add_option("--attack", attack_name, "textenc|xattn|disa");
    cmd_poison->add_option("--trigger", trigger_str, "trigger token ids, e.g. 28 or 28+29");
    cmd_poison->add_option("--target", target, "target concept index");
    cmd_poison->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        ModelSnapshot snap = load_snapshot(snap_path);
        std::vector<int> trig =
            trigger_str.empty() ? std::vector<int>{w.trigger_pool.at(0)} : parse_tokens(trigger_str);
        int tgt = target >= 0 ? target : w.target_pool.at(0);
        AttackConfig cfg = make_attack_config(ex, w, attack_kind_from_name(attack_name), trig, tgt);
        Rng rng = Rng(ex.seed).fork(0x706f69u);
        ModelSnapshot poisoned = run_attack(w, sched, snap, cfg, rng);
        write_file(c.out, snapshot_to_json(poisoned).dump());
        std::cout << "poisoned " << poisoned.hash() << " -> " << c.out << "\n";
    });

    // erase
    auto* cmd_erase = app.add_subcommand("erase", "apply a concept-erasure method");
    std::string method_name = "uce", ckpt_dir;
    int ckpt_every = 0;
    add_common(cmd_erase, c);
    cmd_erase->add_option("--snapshot", snap_path, "input snapshot")->required();
    cmd_erase->add_option("--method", method_name, "esd|uce|mace|rece|receler");
    cmd_erase->add_option("--target", target, "target concept index");
    cmd_erase->add_option("--checkpoint-every", ckpt_every, "emit checkpoints every N iterations");
    cmd_erase->add_option("--checkpoint-dir", ckpt_dir, "directory for checkpoint files");
    cmd_erase->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        ModelSnapshot snap = load_snapshot(snap_path);
        int tgt = target >= 0 ? target : w.target_pool.at(0);
        ErasureConfig cfg = make_erasure_config(ex, w, erasure_method_from_name(method_name), {tgt});
        if (ckpt_every > 0) cfg.checkpoint_every = ckpt_every;
        Rng rng = Rng(ex.seed).fork(0x657261u);
        ErasureResult er = run_erasure(w, sched, snap, cfg, rng);
        write_file(c.out, snapshot_to_json(er.snapshot).dump());
        if (!ckpt_dir.empty()) {
            fs::path dir = fs::path(ckpt_dir) / erasure_method_name(cfg.method);
            fs::create_directories(dir);
            for (const auto& ck : er.checkpoints) {
                char name[32];
                snprintf(name, sizeof(name), "%05d.json", ck.iteration);
                write_file((dir / name).string(), snapshot_to_json(ck.snapshot).dump());
            }
        }
        std::cout << "erased " << er.snapshot.hash() << " (" << er.checkpoints.size()
                  << " checkpoints) -> " << c.out << "\n";
    });

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "run the accuracy suite on a snapshot");
    add_common(cmd_eval, c);
    cmd_eval->add_option("--snapshot", snap_path, "snapshot to evaluate")->required();
    cmd_eval->add_option("--trigger", trigger_str, "trigger token ids");
    cmd_eval->add_option("--target", target, "target concept index");
    cmd_eval->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        ModelSnapshot snap = load_snapshot(snap_path);
        std::vector<int> trig =
            trigger_str.empty() ? std::vector<int>{w.trigger_pool.at(0)} : parse_tokens(trigger_str);
        int tgt = target >= 0 ? target : w.target_pool.at(0);
        EvalConfig cfg = make_eval_config(ex, w, trig, tgt);
        Rng rng = Rng(ex.seed).fork(0x6576616cu);
        EvalReport rep = accuracy_suite(w, sched, snap, cfg, rng);
        nlohmann::json j = {{"acc_r", rep.acc_r},         {"acc_o", rep.acc_o},
                            {"acc_e", rep.acc_e},         {"acc_dagger", rep.acc_dagger},
                            {"frechet", rep.frechet},     {"snapshot_hash", rep.snapshot_hash},
                            {"seed", ex.seed}};
        std::cout << j.dump(2) << "\n";
        if (c.out != "out") write_file(c.out, j.dump(2) + "\n");
    });

    // trajectory
    auto* cmd_traj = app.add_subcommand("trajectory", "evaluate a directory of erasure checkpoints");
    std::string traj_dir;
    add_common(cmd_traj, c);
    cmd_traj->add_option("--dir", traj_dir, "checkpoint directory ({method}/{iter}.json)")->required();
    cmd_traj->add_option("--trigger", trigger_str, "trigger token ids");
    cmd_traj->add_option("--target", target, "target concept index");
    cmd_traj->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        std::vector<Checkpoint> cks;
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(traj_dir))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ModelSnapshot s = load_snapshot(f.string());
            cks.push_back({s.prov.iteration, std::move(s)});
        }
        std::vector<int> trig =
            trigger_str.empty() ? std::vector<int>{w.trigger_pool.at(0)} : parse_tokens(trigger_str);
        int tgt = target >= 0 ? target : w.target_pool.at(0);
        EvalConfig cfg = make_eval_config(ex, w, trig, tgt);
        Rng rng = Rng(ex.seed).fork(0x7472616au);
        TrajectoryRecord rec = trajectory_eval(w, sched, cks, cfg, rng);
        std::ostringstream os;
        os << csv_header() << "\n";
        for (size_t i = 0; i < rec.iterations.size(); ++i) {
            CsvRow r;
            r.run_id = "traj-" + std::to_string(rec.iterations[i]);
            r.phase = "trajectory";
            r.target = tgt;
            r.iteration = rec.iterations[i];
            r.rep = rec.reports[i];
            r.rep.seed = ex.seed;
            os << csv_line(r) << "\n";
        }
        std::cout << os.str();
        if (c.out != "out") write_file(c.out, os.str());
    });

    // detect
    auto* cmd_detect = app.add_subcommand("detect", "attention-anomaly backdoor detection");
    int n_prompts = 40;
    add_common(cmd_detect, c);
    cmd_detect->add_option("--snapshot", snap_path, "snapshot to probe")->required();
    cmd_detect->add_option("--trigger", trigger_str, "trigger token ids");
    cmd_detect->add_option("--target", target, "target concept index");
    cmd_detect->add_option("--prompts", n_prompts, "prompts per class");
    cmd_detect->callback([&]() {
        Experiment ex = experiment_from(c);
        ConceptWorld w = build_world(ex.world_cfg);
        DiffusionSchedule sched = make_schedule(ex.sched_cfg);
        ModelSnapshot snap = load_snapshot(snap_path);
        std::vector<int> trig =
            trigger_str.empty() ? std::vector<int>{w.trigger_pool.at(0)} : parse_tokens(trigger_str);
        int tgt = target >= 0 ? target : w.target_pool.at(0);
        EvalConfig cfg = make_eval_config(ex, w, trig, tgt);
        Rng rng = Rng(ex.seed).fork(0x646574u);
        auto eval_ids = w.templates.eval_ids();
        std::vector<std::pair<double, int>> scored;
        for (int i = 0; i < n_prompts; ++i) {
            int tmpl = eval_ids[size_t(i) % eval_ids.size()];
            Prompt pt = render_prompt(w, tmpl, trig, {}, PromptRole::Trigger);
            Rng r1 = rng.fork(2 * i);
            scored.push_back({anomaly_score(w, sched, snap, pt, cfg, r1), 1});
            int cc = (i % 2 == 0) ? tgt : w.heldout_pool[size_t(i / 2) % w.heldout_pool.size()];
            Prompt pc = render_prompt(w, tmpl, {w.concept_tokens[cc]});
            Rng r2 = rng.fork(2 * i + 1);
            scored.push_back({anomaly_score(w, sched, snap, pc, cfg, r2), 0});
        }
        double auc = roc_auc(scored);
        std::ostringstream os;
        os << scores_csv_header() << "\n";
        for (const auto& [s, y] : scored) {
            char buf[64];
            snprintf(buf, sizeof(buf), "detect,%d,%.17g", y, s);
            os << buf << "\n";
        }
        std::cout << "auc " << auc << "\n";
        if (c.out != "out") write_file(c.out, os.str());
    });

    // report
    auto* cmd_report = app.add_subcommand("report", "render tables and plots from a results CSV");
    std::string csv_path, kind = "table";
    add_common(cmd_report, c);
    cmd_report->add_option("--csv", csv_path, "results CSV (scores CSV for roc-plot)")->required();
    cmd_report->add_option("--kind", kind, "table|trajectory-plot|roc-plot|bar-chart");
    cmd_report->callback([&]() {
        report_emit(read_file(csv_path), kind, c.out);
        std::cout << "report (" << kind << ") -> " << c.out << ".*\n";
    });

    // pipeline
    auto* cmd_pipe = app.add_subcommand("pipeline", "run the full experiment grid");
    int jobs = 1;
    bool resume = false;
    add_common(cmd_pipe, c);
    cmd_pipe->add_option("--jobs", jobs, "worker threads");
    cmd_pipe->add_flag("--resume", resume, "skip completed cells");
    cmd_pipe->callback([&]() {
        nlohmann::json j = load_config(c.config_path);
        if (c.seed_set) j["seed"] = c.seed;
        PipelineOptions opts;
        opts.out_dir = c.out;
        opts.jobs = jobs;
        opts.resume = resume;
        int rc = run_pipeline(j, opts);
        if (rc != 0) throw CLI::RuntimeError(rc);
        std::cout << "pipeline complete -> " << c.out << "\n";
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}
