#pragma once

#include "qroar/evaluator.hpp"
#include "qroar/plan.hpp"

#include <chrono>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace qroar {

// Line-delimited JSON protocol spoken with an external perplexity backend over
// the child's stdin/stdout.
namespace protocol {

inline constexpr int version = 1;

struct Hello {
    int version = protocol::version;
    bool operator==(const Hello&) const = default;
};

// The plan as sent on the wire: no frequencies, bands as [lo, hi) pairs.
struct WirePlan {
    ScaleMode mode = ScaleMode::symmetric;
    std::vector<double> scales;
    std::vector<BandRange> bands;
    Pairing pairing = Pairing::half_split;
    bool operator==(const WirePlan&) const = default;
};

struct EvalRequest {
    WirePlan plan;
    std::vector<int> lengths;
    int window = 256;
    bool operator==(const EvalRequest&) const = default;
};

struct Ok {
    std::map<int, double> ppl;
    bool operator==(const Ok&) const = default;
};

struct Error {
    std::string message;
    bool operator==(const Error&) const = default;
};

using Message = std::variant<Hello, EvalRequest, Ok, Error>;

WirePlan to_wire(const ScalePlan& plan);

// Single line, no trailing newline.
std::string serialize(const Message& message);
// Throws ProtocolError carrying the raw line on malformed input.
Message parse(const std::string& line);

} // namespace protocol

// Runs `command` through /bin/sh and scores plans by the weighted mean of the
// per-length perplexities it returns. One request in flight at a time.
class ExternalEvaluator : public Evaluator {
public:
    ExternalEvaluator(const std::string& command, ObjectiveSpec spec,
                      std::chrono::milliseconds timeout = std::chrono::minutes(10));
    ~ExternalEvaluator() override;

    ExternalEvaluator(const ExternalEvaluator&) = delete;
    ExternalEvaluator& operator=(const ExternalEvaluator&) = delete;

    Evaluation evaluate(const ScalePlan& plan) override;
    std::string kind() const override { return "external_ppl"; }

private:
    void send_line(const std::string& line);
    std::string read_line();
    void shutdown();

    ObjectiveSpec spec_;
    std::chrono::milliseconds timeout_;
    int fd_ = -1;
    int pid_ = -1;
    std::string buffer_;
};

Evaluation external_eval(const ScalePlan& plan, const ObjectiveSpec& spec, const std::string& command);

} // namespace qroar
