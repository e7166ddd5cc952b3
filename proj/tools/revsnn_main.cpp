#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "revsnn/data.hpp"
#include "revsnn/train.hpp"
#include "revsnn/verify.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace revsnn;

constexpr int kSynthClasses = 4;
constexpr int kSynthTrain = 384;
constexpr int kSynthTest = 96;

// "synth" is the builtin rate-coded task; anything else is a CIFAR binary
// file. The synth test split draws from a shifted seed so it never overlaps
// the train split.
Dataset load_dataset(const std::string& where, std::uint64_t seed, int timesteps, bool test_split) {
    if (where == "synth")
        return synth_task(seed + (test_split ? 2 : 1), kSynthClasses,
                          test_split ? kSynthTest : kSynthTrain, timesteps);
    return load_cifar_binary(where);
}

void print_config(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cout << "resolved config:\n";
    for (const auto& [k, v] : kv) std::cout << "  " << k << " = " << v << '\n';
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) parts.push_back(item);
    return parts;
}

struct TrainArgs {
    std::string arch = "1,1,1,1";
    std::string flavor = "pararev";
    std::string policy = "recompute";
    std::string data = "synth";
    std::string test_data;
    std::string optimizer = "sgd-momentum";
    std::string out = "runs/train";
    int epochs = 1;
    double lr = -1.0;  // negative = optimizer default
    std::uint64_t seed = 1;
    int workers = 1;
    int timesteps = 4;
    int batch = 32;
    double weight_decay = 0.0;
    bool augment = false;
};

int run_train(const TrainArgs& a) {
    Flavor flavor = flavor_from_string(a.flavor);
    Policy policy = policy_from_string(a.policy);
    OptimizerKind opt = optimizer_from_string(a.optimizer);
    double lr = a.lr >= 0.0 ? a.lr : default_lr(opt);

    Dataset train_ds = load_dataset(a.data, a.seed, a.timesteps, false);
    Dataset test_ds;
    bool has_test = false;
    if (!a.test_data.empty()) {
        test_ds = load_dataset(a.test_data, a.seed, a.timesteps, true);
        has_test = true;
    } else if (a.data == "synth") {
        test_ds = load_dataset("synth", a.seed, a.timesteps, true);
        has_test = true;
    }

    ArchSpec spec = make_arch(a.arch, flavor, a.timesteps, train_ds.classes, train_ds.channels);

    print_config({{"command", "train"},
                  {"arch", a.arch},
                  {"flavor", flavor_name(flavor)},
                  {"policy", policy_name(policy)},
                  {"data", a.data},
                  {"test_data", has_test ? (a.test_data.empty() ? "synth" : a.test_data) : "none"},
                  {"optimizer", optimizer_name(opt)},
                  {"epochs", std::to_string(a.epochs)},
                  {"lr", std::to_string(lr)},
                  {"batch", std::to_string(a.batch)},
                  {"seed", std::to_string(a.seed)},
                  {"workers", std::to_string(a.workers)},
                  {"timesteps", std::to_string(a.timesteps)},
                  {"weight_decay", std::to_string(a.weight_decay)},
                  {"augment", a.augment ? "true" : "false"},
                  {"layers", std::to_string(count_layers(spec))},
                  {"classes", std::to_string(train_ds.classes)},
                  {"train_samples", std::to_string(train_ds.size())},
                  {"out", a.out}});

    Network net(spec, a.seed);
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.lr = static_cast<float>(lr);
    cfg.optimizer = opt;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.policy = policy;
    cfg.workers = a.workers;
    cfg.weight_decay = static_cast<float>(a.weight_decay);
    cfg.augment = a.augment;

    RunMetrics rm = train_network(net, train_ds, has_test ? &test_ds : nullptr, cfg, &std::cout);

    std::filesystem::create_directories(a.out);
    write_metrics_csv(a.out + "/metrics.csv", rm);
    save_checkpoint(net, a.out + "/model.ckpt");

    double top1 = (rm.final_test_acc >= 0.0 ? rm.final_test_acc : rm.final_train_acc) * 100.0;
    json summary;
    summary["Top1 acc(%)"] = top1;
    summary["Train time(h)"] = rm.train_seconds_total / 3600.0;
    summary["Inference time(us/img)"] = rm.inference_us_per_image;
    summary["Mem (MB/img)"] =
        static_cast<double>(rm.peak_activation_bytes) / a.batch / (1024.0 * 1024.0);
    json detail;
    detail["train_seconds_total"] = rm.train_seconds_total;
    detail["train_seconds_compute"] = rm.train_seconds_compute;
    detail["peak_activation_bytes"] = rm.peak_activation_bytes;
    detail["final_train_acc"] = rm.final_train_acc;
    detail["final_test_acc"] = rm.final_test_acc;
    detail["epochs"] = rm.epochs.size();
    detail["layers"] = count_layers(spec);
    detail["flavor"] = flavor_name(flavor);
    detail["policy"] = policy_name(policy);
    summary["detail"] = detail;

    std::ofstream js(a.out + "/summary.json");
    if (!js) throw std::runtime_error("cannot write " + a.out + "/summary.json");
    js << summary.dump(2) << '\n';
    std::cout << summary.dump(2) << '\n';
    std::cout << "wrote " << a.out << "/model.ckpt, metrics.csv, summary.json\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data = "synth";
    std::string out;
    int batch = 32;
    std::uint64_t seed = 1;
    int workers = 1;
};

int run_eval(const EvalArgs& a) {
    ArchSpec spec = load_checkpoint_arch(a.checkpoint);
    Dataset ds = load_dataset(a.data, a.seed, spec.timesteps, true);
    if (ds.classes > spec.num_classes)
        throw std::invalid_argument("eval: dataset has " + std::to_string(ds.classes) +
                                    " classes but the checkpoint was trained with " +
                                    std::to_string(spec.num_classes));
    if (ds.channels != spec.in_channels)
        throw std::invalid_argument("eval: dataset has " + std::to_string(ds.channels) +
                                    " channels but the checkpoint expects " +
                                    std::to_string(spec.in_channels));

    print_config({{"command", "eval"},
                  {"checkpoint", a.checkpoint},
                  {"data", a.data},
                  {"batch", std::to_string(a.batch)},
                  {"seed", std::to_string(a.seed)},
                  {"workers", std::to_string(a.workers)},
                  {"samples", std::to_string(ds.size())}});

    Network net(spec, a.seed);
    load_checkpoint(net, a.checkpoint);
    Executor exec(a.workers);
    EvalResult r = evaluate(net, ds, a.batch, exec);

    json out;
    out["Top1 acc(%)"] = r.accuracy * 100.0;
    out["Inference time(us/img)"] = r.us_per_image;
    out["loss"] = r.loss;
    std::cout << out.dump(2) << '\n';
    if (!a.out.empty()) {
        std::ofstream js(a.out);
        if (!js) throw std::runtime_error("cannot write " + a.out);
        js << out.dump(2) << '\n';
    }
    return 0;
}

struct VerifyArgs {
    std::string suite;
    std::uint64_t seed = 1;
    int trials = 500;
    int nets = 50;
};

int run_verify(const VerifyArgs& a) {
    std::vector<std::string> suites;
    if (a.suite == "all")
        suites = suite_names();
    else
        suites = split_csv(a.suite);
    if (suites.empty()) throw std::invalid_argument("verify: no suite given");

    print_config({{"command", "verify"},
                  {"suite", a.suite},
                  {"seed", std::to_string(a.seed)},
                  {"trials", std::to_string(a.trials)},
                  {"nets", std::to_string(a.nets)}});

    VerifyOptions opt;
    opt.seed = a.seed;
    opt.inversion_trials = a.trials;
    opt.policy_nets = a.nets;

    bool pass = true;
    for (const std::string& name : suites) {
        SuiteResult r = run_suite(name, opt);
        std::cout << "== suite " << name << " ==\n" << r.report;
        pass = pass && r.pass;
    }
    std::cout << (pass ? "verify: all checks passed\n" : "verify: FAILED\n");
    return pass ? 0 : 1;
}

struct BenchArgs {
    std::string arch = "1,1,1,1";
    std::string flavors = "baseline,pararev,pararev-fused";
    std::string workers = "1,2,4";
    std::string out;
    int repeat = 5;
    int timesteps = 4;
    std::uint64_t seed = 1;
};

int run_bench_cmd(const BenchArgs& a) {
    std::vector<Flavor> flavors;
    for (const std::string& f : split_csv(a.flavors)) flavors.push_back(flavor_from_string(f));
    std::vector<int> workers = parse_int_list(a.workers);
    ArchSpec spec = make_arch(a.arch, Flavor::ParaRev, a.timesteps, 10, 3);

    print_config({{"command", "bench"},
                  {"arch", a.arch},
                  {"flavors", a.flavors},
                  {"workers", a.workers},
                  {"repeat", std::to_string(a.repeat)},
                  {"timesteps", std::to_string(a.timesteps)},
                  {"seed", std::to_string(a.seed)},
                  {"out", a.out.empty() ? "(stdout)" : a.out}});

    std::vector<BenchRow> rows = run_bench(spec, flavors, workers, a.repeat, a.seed);
    std::string csv = bench_csv(rows);
    std::cout << csv;
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw std::runtime_error("cannot write " + a.out);
        os << csv;
    }
    return 0;
}

struct GraphArgs {
    std::string arch = "2";
    std::string flavor = "pararev";
    std::string out;
};

int run_graph(const GraphArgs& a) {
    Flavor flavor = flavor_from_string(a.flavor);
    ArchSpec spec = make_arch(a.arch, flavor, 1, 10, 3);
    int blocks = spec.stage_blocks[0];

    print_config({{"command", "graph"},
                  {"arch", a.arch},
                  {"flavor", flavor_name(flavor)},
                  {"blocks", std::to_string(blocks)},
                  {"out", a.out.empty() ? "(stdout)" : a.out}});

    TaskGraph g = build_forward_chain_graph(blocks, flavor);
    std::string title = std::string(flavor_name(flavor)) + "_forward_b" + std::to_string(blocks);
    std::string text = graph_to_text(g, title);
    TaskGraph back = graph_from_text(text);  // vouch the emitted text reimports
    if (back.size() != g.size() || back.critical_path_length() != g.critical_path_length())
        throw std::runtime_error("graph: emitted text did not round-trip");

    if (a.out.empty()) {
        std::cout << text;
    } else {
        std::ofstream os(a.out);
        if (!os) throw std::runtime_error("cannot write " + a.out);
        os << text;
        std::cout << "wrote " << a.out << " (" << g.size() << " nodes, critical path "
                  << g.critical_path_length() << ")\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reversible spiking network engine"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read option defaults from an INI file ([subcommand] sections)");

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "train and write checkpoint/metrics/summary");
    train->add_option("--arch", ta.arch, "blocks per stage, e.g. 2,2,2,2")->capture_default_str();
    train->add_option("--flavor", ta.flavor, "baseline | pararev | pararev-fused")
        ->capture_default_str();
    train->add_option("--policy", ta.policy, "store-all | recompute")->capture_default_str();
    train->add_option("--data", ta.data, "synth or a CIFAR binary file")->capture_default_str();
    train->add_option("--test-data", ta.test_data, "held-out set (defaults: synth split)");
    train->add_option("--optimizer", ta.optimizer, "sgd-momentum | adamw")->capture_default_str();
    train->add_option("--epochs", ta.epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--lr", ta.lr, "negative = optimizer default");
    train->add_option("--batch", ta.batch)->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--seed", ta.seed)->capture_default_str();
    train->add_option("--workers", ta.workers)->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--timesteps", ta.timesteps)
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    train->add_option("--weight-decay", ta.weight_decay)->capture_default_str();
    train->add_flag("--augment", ta.augment, "random crop + flip augmentation");
    train->add_option("--out", ta.out, "output directory")->capture_default_str();

    EvalArgs ea;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ea.checkpoint)->required();
    eval->add_option("--data", ea.data, "synth or a CIFAR binary file")->capture_default_str();
    eval->add_option("--batch", ea.batch)->capture_default_str()->check(CLI::PositiveNumber);
    eval->add_option("--seed", ea.seed)->capture_default_str();
    eval->add_option("--workers", ea.workers)->capture_default_str()->check(CLI::PositiveNumber);
    eval->add_option("--out", ea.out, "also write the JSON result here");

    VerifyArgs va;
    CLI::App* verify = app.add_subcommand("verify", "run invariant check suites");
    verify->add_option("--suite", va.suite,
                       "all | inversion | gradcheck | policy-equiv | memory-scaling | "
                       "critical-path | fused-equiv (comma list ok)")
        ->required();
    verify->add_option("--seed", va.seed)->capture_default_str();
    verify->add_option("--trials", va.trials, "inversion round-trips")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    verify->add_option("--nets", va.nets, "policy-equiv chains")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    BenchArgs ba;
    CLI::App* bench = app.add_subcommand("bench", "time training steps per flavor and workers");
    bench->add_option("--arch", ba.arch, "blocks per stage")->capture_default_str();
    bench->add_option("--flavors", ba.flavors, "comma list")->capture_default_str();
    bench->add_option("--workers", ba.workers, "comma list")->capture_default_str();
    bench->add_option("--repeat", ba.repeat)->capture_default_str()->check(CLI::PositiveNumber);
    bench->add_option("--timesteps", ba.timesteps)
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    bench->add_option("--seed", ba.seed)->capture_default_str();
    bench->add_option("--out", ba.out, "CSV path (stdout otherwise)");

    GraphArgs ga;
    CLI::App* graph = app.add_subcommand("graph", "emit a stage's forward task graph");
    graph->add_option("--arch", ga.arch, "blocks per stage; the first stage is emitted")
        ->capture_default_str();
    graph->add_option("--flavor", ga.flavor)->capture_default_str();
    graph->add_option("--out", ga.out, "graph text path (stdout otherwise)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return run_train(ta);
        if (eval->parsed()) return run_eval(ea);
        if (verify->parsed()) return run_verify(va);
        if (bench->parsed()) return run_bench_cmd(ba);
        if (graph->parsed()) return run_graph(ga);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
