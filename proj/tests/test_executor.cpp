#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <stdexcept>
#include <string>
#include <vector>

#include "revsnn/executor.hpp"
#include "revsnn/rng.hpp"

using namespace revsnn;

TEST_CASE("tasks run exactly once and see their predecessors' writes") {
    for (int workers : {1, 2, 4}) {
        const int n = 64;
        TaskGraph g;
        std::vector<int> value(n, 0);
        std::atomic<int> ran{0};
        for (int i = 0; i < n; ++i) g.add_node("t" + std::to_string(i), NodeKind::Add, i);
        for (int i = 1; i < n; ++i) g.add_edge(i - 1, i);
        for (int i = 0; i < n; ++i)
            g.set_work("t" + std::to_string(i), [&, i]() {
                value[i] = (i == 0 ? 1 : value[i - 1] + 1);
                ran.fetch_add(1);
            });
        Executor exec(workers);
        exec.run(g);
        CHECK(ran.load() == n);
        CHECK(value[n - 1] == n);
    }
}

TEST_CASE("results are identical for any worker count") {
    // A diamond-heavy random DAG accumulating distinct primes per path.
    auto build_and_run = [](int workers) {
        Rng rng(17);
        const int n = 120;
        TaskGraph g;
        std::vector<std::uint64_t> out(n, 0);
        for (int i = 0; i < n; ++i)
            g.add_node("t" + std::to_string(i), NodeKind::Add, i, 0.5 + rng.next_double());
        std::vector<std::vector<int>> preds(n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.next_double() < 0.08) {
                    g.add_edge(i, j);
                    preds[j].push_back(i);
                }
        for (int i = 0; i < n; ++i)
            g.set_work("t" + std::to_string(i), [&, i]() {
                std::uint64_t acc = 1469598103934665603ull + i;
                for (int p : preds[i]) acc = acc * 1099511628211ull ^ out[p];
                out[i] = acc;
            });
        Executor exec(workers);
        exec.run(g);
        return out;
    };

    std::vector<std::uint64_t> one = build_and_run(1);
    CHECK(build_and_run(2) == one);
    CHECK(build_and_run(4) == one);
}

TEST_CASE("a single worker runs inline in smallest-ready-id order") {
    TaskGraph g;
    std::vector<int> order;
    for (int i = 0; i < 5; ++i) g.add_node("t" + std::to_string(i), NodeKind::Add, i);
    g.add_edge(4, 0);  // 0 becomes ready only after 4
    for (int i = 0; i < 5; ++i)
        g.set_work("t" + std::to_string(i), [&, i]() { order.push_back(i); });
    Executor exec(1);
    exec.run(g);
    CHECK(order == std::vector<int>{1, 2, 3, 4, 0});
}

TEST_CASE("task exceptions surface with the task's name") {
    for (int workers : {1, 3}) {
        TaskGraph g;
        g.add_node("fine", NodeKind::Add, 0);
        g.add_node("exploding_task", NodeKind::Add, 1);
        g.add_node("after", NodeKind::Add, 2);
        g.add_edge(1, 2);
        g.set_work("fine", []() {});
        g.set_work("exploding_task", []() { throw std::logic_error("boom"); });
        bool after_ran = false;
        g.set_work("after", [&]() { after_ran = true; });

        Executor exec(workers);
        try {
            exec.run(g);
            CHECK(false);
        } catch (const std::runtime_error& e) {
            std::string msg = e.what();
            CHECK(msg.find("exploding_task") != std::string::npos);
            CHECK(msg.find("boom") != std::string::npos);
        }
        CHECK_FALSE(after_ran);  // successors of a failed task must not run
    }
}

TEST_CASE("worker count is validated and reported") {
    CHECK_THROWS_AS(Executor(0), std::invalid_argument);
    Executor exec(3);
    CHECK(exec.workers() == 3);
}

TEST_CASE("an executor is reusable across graphs") {
    Executor exec(2);
    for (int round = 0; round < 3; ++round) {
        TaskGraph g;
        std::atomic<int> ran{0};
        for (int i = 0; i < 10; ++i) {
            g.add_node("t" + std::to_string(i), NodeKind::Add, i);
            g.set_work("t" + std::to_string(i), [&]() { ran.fetch_add(1); });
        }
        exec.run(g);
        CHECK(ran.load() == 10);
    }
}
