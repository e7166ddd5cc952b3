#include "revsnn/executor.hpp"

#include <queue>
#include <stdexcept>

namespace revsnn {

Executor::Executor(int workers) : workers_(workers) {
    if (workers < 1) throw std::invalid_argument("Executor: workers must be >= 1");
}

void Executor::run(TaskGraph& graph) {
    graph.topo_order();  // validates acyclicity up front
    if (workers_ == 1) run_inline(graph);
    else run_pool(graph);
}

void Executor::run_inline(TaskGraph& graph) {
    for (int u : graph.topo_order()) {
        if (!graph.node(u).work) continue;
        try {
            graph.node(u).work();
        } catch (const std::exception& e) {
            throw std::runtime_error("task " + graph.node(u).name + " failed: " + e.what());
        }
    }
}

void Executor::run_pool(TaskGraph& graph) {
    std::mutex mu;
    std::condition_variable cv;
    std::vector<int> indeg(graph.size());
    std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
    for (int i = 0; i < graph.size(); ++i) {
        indeg[i] = static_cast<int>(graph.preds(i).size());
        if (indeg[i] == 0) ready.push(i);
    }
    int remaining = graph.size();
    std::exception_ptr first_error;
    std::string failed_task;

    auto worker = [&]() {
        std::unique_lock<std::mutex> lock(mu);
        while (true) {
            cv.wait(lock, [&] { return remaining == 0 || !ready.empty(); });
            if (remaining == 0) return;
            const int u = ready.top();
            ready.pop();
            const bool poisoned = static_cast<bool>(first_error);
            lock.unlock();
            std::exception_ptr err;
            if (graph.node(u).work && !poisoned) {
                try {
                    graph.node(u).work();
                } catch (...) {
                    err = std::current_exception();
                }
            }
            lock.lock();
            if (err && !first_error) {
                first_error = err;
                failed_task = graph.node(u).name;
            }
            for (int v : graph.succs(u))
                if (--indeg[v] == 0) ready.push(v);
            --remaining;
            if (remaining == 0 || !ready.empty()) cv.notify_all();
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers_);
    for (int i = 0; i < workers_; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    if (first_error) {
        try {
            std::rethrow_exception(first_error);
        } catch (const std::exception& e) {
            throw std::runtime_error("task " + failed_task + " failed: " + e.what());
        }
    }
}

}  // namespace revsnn
