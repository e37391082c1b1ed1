#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "opennas/evaluation.hpp"

namespace opennas {

// Newline-delimited JSON messages exchanged with a trainer process over its
// stdin/stdout.
//
//   backend -> {"op":"hello","max_parallelism":m,...}            (first line)
//   engine  -> {"id":n,"op":"evaluate","architecture":{...},"epochs":e,
//               "dataset":"fashion_mnist","subset_size":s,"seed":k}
//   backend -> {"id":n,"ok":true,"val_accuracy":a,"val_loss":l,
//               "wall_seconds":t,"param_count":p}
//           |  {"id":n,"ok":false,"error":"message"}
namespace protocol {

struct Response {
    std::int64_t id = 0;
    bool ok = false;
    FitnessReport report;
    std::string error;
};

nlohmann::ordered_json encode_request(std::int64_t id, const EvalRequest& request);
// Throws SchemaError on a malformed request.
EvalRequest decode_request(const nlohmann::json& message, std::int64_t& id);

nlohmann::ordered_json encode_response(std::int64_t id, const FitnessReport& report);
nlohmann::ordered_json encode_error(std::int64_t id, const std::string& message);
// Throws SchemaError on a malformed response.
Response decode_response(const nlohmann::json& message);

} // namespace protocol

// Evaluator backed by a spawned trainer process (`/bin/sh -c command`).
// Requests may be pipelined up to the max_parallelism announced in the
// backend's hello; responses are matched by id. Any crash, protocol error or
// timeout surfaces as EvaluatorFailure carrying the tail of the backend's
// stderr, and leaves the client unusable.
class ExternTrainer final : public Evaluator {
public:
    using Seconds = std::chrono::duration<double>;

    // Throws EvaluatorFailure if the process cannot be started or does not
    // say hello within `timeout`.
    ExternTrainer(std::string command, Seconds timeout);
    ~ExternTrainer() override;

    ExternTrainer(const ExternTrainer&) = delete;
    ExternTrainer& operator=(const ExternTrainer&) = delete;

    // OPENNAS_TRAINER_TIMEOUT_S, default 3600 s.
    static Seconds timeout_from_env();

    FitnessReport evaluate(const EvalRequest& request) override;
    int max_parallelism() const override;

    const nlohmann::json& hello() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace opennas
