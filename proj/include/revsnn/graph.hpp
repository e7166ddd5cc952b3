#pragma once

#include <functional>
#include <string>
#include <vector>

namespace revsnn {

enum class Flavor { Baseline, ParaRev, ParaRevFused };
const char* flavor_name(Flavor f);
Flavor flavor_from_string(const std::string& s);  // throws std::invalid_argument

enum class Policy { StoreAll, Recompute };
const char* policy_name(Policy p);
Policy policy_from_string(const std::string& s);

enum class NodeKind { F, G, M, InvF, InvG, InvM, VjpF, VjpG, VjpM, Add };
const char* node_kind_name(NodeKind k);

struct TaskNode {
    std::string name;
    NodeKind kind = NodeKind::Add;
    int index = 0;    // block position, 1-based; 0 for synthetic nodes
    double cost = 1.0;
    std::function<void()> work;  // empty in analysis graphs
};

// Static DAG of tasks. Edges mean "from must finish before to starts".
class TaskGraph {
public:
    int add_node(std::string name, NodeKind kind, int index, double cost = 1.0);
    void add_edge(int from, int to);
    void set_work(const std::string& name, std::function<void()> fn);

    int size() const { return static_cast<int>(nodes_.size()); }
    TaskNode& node(int i) { return nodes_[i]; }
    const TaskNode& node(int i) const { return nodes_[i]; }
    int find(const std::string& name) const;  // -1 when absent
    const std::vector<int>& preds(int i) const { return preds_[i]; }
    const std::vector<int>& succs(int i) const { return succs_[i]; }

    // Kahn's algorithm, smallest node id first. Throws std::runtime_error if
    // a cycle remains.
    std::vector<int> topo_order() const;
    // Longest path counted in nodes.
    int critical_path_length() const;
    double critical_path_cost() const;

private:
    std::vector<TaskNode> nodes_;
    std::vector<std::vector<int>> preds_;
    std::vector<std::vector<int>> succs_;
};

// Forward task graphs for a chain of `blocks` coupled blocks. Nodes are the
// function evaluations; stream additions ride along inside consumers.
// Baseline: F_k waits on G_k-1, giving a 2B critical path. Stream-swapped:
// F_k waits only on F_k-1 and G_k-2, giving B+1. Fused: linear, B+1 modules.
TaskGraph build_forward_chain_graph(int blocks, Flavor flavor);

// Backward graphs. Recompute policy includes the inversion evaluations (i*);
// VJP evaluations (b*) consume adjoints materialized by add nodes (a*/u*/w*).
TaskGraph build_backward_chain_graph(int blocks, Flavor flavor, Policy policy);

// List scheduling with `workers` identical workers: ready task with the
// lowest id runs first. Returns the simulated makespan in cost units.
double simulate_makespan(const TaskGraph& g, int workers);

// DOT-like text form. Node lines carry kind/index/cost attributes, edge
// lines are "a -> b;". graph_from_text round-trips everything but closures.
std::string graph_to_text(const TaskGraph& g, const std::string& title);
TaskGraph graph_from_text(const std::string& text);

}  // namespace revsnn
