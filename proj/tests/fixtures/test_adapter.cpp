// Protocol adapter used by the tests: test_adapter <mode> [p] [batch-log]
//   f1        10 x1 x2 + sum_{i>=3} x_i (p = 10)
//   additive  sum x_i
//   product   x1 x2
//   error     answers every predict with an error message, then keeps serving
//   bad-json  answers predict with a malformed line
//   null      returns null for the first output
//   short     returns one output too few
//   wrong-id  echoes a different request id
//   exit      exits before the handshake
//   crash     exits on the first predict
//   p0        advertises p = 0
//   silent    never answers hello
// If batch-log is given, every predict appends its row count to that file.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "f1";
    std::size_t p = mode == "f1" ? 10 : 3;
    if (argc > 2) p = std::stoul(argv[2]);
    const std::string batch_log = argc > 3 ? argv[3] : "";

    if (mode == "exit") return 3;
    std::string line;
    while (std::getline(std::cin, line)) {
        const json msg = json::parse(line, nullptr, false);
        if (msg.is_discarded()) return 4;
        const std::string type = msg.value("type", "");
        if (type == "hello") {
            if (mode == "silent") {
                std::this_thread::sleep_for(std::chrono::seconds(30));
                return 0;
            }
            std::cout << json{{"type", "ready"}, {"p", mode == "p0" ? 0 : p}, {"name", "test-" + mode}}.dump()
                      << std::endl;
        } else if (type == "predict") {
            const auto& inputs = msg.at("inputs");
            if (!batch_log.empty()) std::ofstream(batch_log, std::ios::app) << inputs.size() << '\n';
            if (mode == "crash") return 5;
            if (mode == "error") {
                std::cout << json{{"type", "error"}, {"id", msg["id"]}, {"message", "model unavailable"}}.dump()
                          << std::endl;
                continue;
            }
            if (mode == "bad-json") {
                std::cout << "{not json" << std::endl;
                continue;
            }
            json outputs = json::array();
            for (const auto& row : inputs) {
                const auto x = row.get<std::vector<double>>();
                double y = 0.0;
                if (mode == "f1")
                    y = 10.0 * x[0] * x[1] + std::accumulate(x.begin() + 2, x.end(), 0.0);
                else if (mode == "product")
                    y = x[0] * x[1];
                else
                    y = std::accumulate(x.begin(), x.end(), 0.0);
                outputs.push_back(y);
            }
            if (mode == "null" && !outputs.empty()) outputs[0] = nullptr;
            if (mode == "short" && !outputs.empty()) outputs.erase(outputs.size() - 1);
            json id = msg["id"];
            if (mode == "wrong-id") id = id.get<long long>() + 1000;
            std::cout << json{{"type", "outputs"}, {"id", id}, {"outputs", outputs}}.dump() << std::endl;
        } else if (type == "bye") {
            return 0;
        }
    }
    return 0;
}
