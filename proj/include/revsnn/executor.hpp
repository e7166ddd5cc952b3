#pragma once

#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "revsnn/graph.hpp"

namespace revsnn {

// Runs a TaskGraph's closures respecting its edges. Every task writes only
// its own output slots, so results are identical for any worker count; only
// timing changes. A worker count of 1 executes inline in deterministic
// topological order (smallest ready id first).
class Executor {
public:
    explicit Executor(int workers);

    int workers() const { return workers_; }

    // Blocks until all tasks ran. The first task exception is rethrown as
    // std::runtime_error naming the task; remaining tasks are drained.
    void run(TaskGraph& graph);

private:
    void run_inline(TaskGraph& graph);
    void run_pool(TaskGraph& graph);

    int workers_;
};

}  // namespace revsnn
