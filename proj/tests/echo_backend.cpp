// Scripted perplexity backend for protocol tests.
//
//   echo_backend MODE [ARG] [--log FILE]
//
// fixed V      every length gets ppl V
// per-length   ppl = length / 256
// quadratic    ppl = 1 + sum_b (ln g_b - 0.1 (b + 1))^2
// malformed    replies with a broken line
// error        replies with an error message
// no-hello     skips the handshake
// nan          ppl is null
// missing      empty ppl map
// silent       handshake, then never answers

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

using nlohmann::json;

int main(int argc, char** argv)
{
    if (argc < 2) {
        std::cerr << "usage: echo_backend MODE [ARG] [--log FILE]\n";
        return 2;
    }
    const std::string mode = argv[1];
    double fixed = 7.0;
    std::ofstream log;
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--log" && i + 1 < argc)
            log.open(argv[++i], std::ios::app);
        else
            fixed = std::stod(arg);
    }

    std::string line;
    bool greeted = false;
    while (std::getline(std::cin, line)) {
        if (log.is_open())
            log << line << '\n' << std::flush;
        const json msg = json::parse(line);
        if (!greeted) {
            greeted = true;
            if (mode == "no-hello")
                std::cout << json{{"type", "ok"}, {"ppl", json::object()}}.dump() << std::endl;
            else
                std::cout << json{{"type", "hello"}, {"version", 1}}.dump() << std::endl;
            continue;
        }
        if (mode == "silent") {
            std::this_thread::sleep_for(std::chrono::seconds(30));
            return 0;
        }
        if (mode == "malformed") {
            std::cout << "{\"type\": \"ok\", \"ppl\": " << std::endl;
            continue;
        }
        if (mode == "error") {
            std::cout << json{{"type", "error"}, {"message", "out of memory"}}.dump() << std::endl;
            continue;
        }

        json ppl = json::object();
        if (mode != "missing") {
            double quad = 1.0;
            const auto& scales = msg.at("plan").at("scales");
            for (std::size_t b = 0; b < scales.size(); ++b) {
                const double d = std::log(scales[b].get<double>()) - 0.1 * static_cast<double>(b + 1);
                quad += d * d;
            }
            for (int length : msg.at("lengths")) {
                const std::string key = std::to_string(length);
                if (mode == "fixed")
                    ppl[key] = fixed;
                else if (mode == "per-length")
                    ppl[key] = length / 256.0;
                else if (mode == "quadratic")
                    ppl[key] = quad;
                else if (mode == "nan")
                    ppl[key] = nullptr;
            }
        }
        std::cout << json{{"type", "ok"}, {"ppl", ppl}}.dump() << std::endl;
    }
    return 0;
}
