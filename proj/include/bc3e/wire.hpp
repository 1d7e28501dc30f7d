#pragma once

// Wire protocol. A frame is a 4-byte big-endian payload length followed by
// a UTF-8 JSON payload {type, version, round, body}. Five message types
// exist: PARAMS_BROADCAST, PARTIAL_STATS, TERMINATE, RESYNC_REQUEST, ACK.
//
// Payloads are byte-reproducible and their length depends only on the
// problem shape, never on how many instances a site holds:
//   - doubles are nonnegative here and serialize as exactly 23 characters
//     of 17-significant-digit scientific decimal,
//   - ExactSum fields serialize as sign + 39 decimal digits,
//   - counters serialize as zero-padded fixed-width strings.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "bc3e/errors.hpp"
#include "bc3e/exact_sum.hpp"
#include "bc3e/matrix.hpp"
#include "bc3e/suff_stats.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

constexpr int kWireVersion = 1;
constexpr int kRingSiteId = 9999;  // site_id carried by ring-accumulated totals
constexpr std::uint32_t kMaxFrameBytes = 1u << 26;

enum class MessageType { ParamsBroadcast, PartialStats, Terminate, ResyncRequest, Ack };

inline const char* message_type_name(MessageType t) {
    switch (t) {
        case MessageType::ParamsBroadcast: return "PARAMS_BROADCAST";
        case MessageType::PartialStats: return "PARTIAL_STATS";
        case MessageType::Terminate: return "TERMINATE";
        case MessageType::ResyncRequest: return "RESYNC_REQUEST";
        case MessageType::Ack: return "ACK";
    }
    return "?";
}

struct ParamsBroadcast {
    std::uint64_t round = 1;
    std::vector<double> alpha;
    std::vector<MatrixD> beta;
    double eps_beta = 1e-10;   // config echo
    bool freeze_alpha = false; // config echo
};

struct PartialStatsMsg {
    int site_id = 0;
    std::uint64_t round = 1;
    SuffStats stats;
};

struct TerminateMsg {
    std::uint64_t round = 1;
    bool converged = false;
};

struct ResyncRequestMsg {
    int site_id = 0;
    std::uint64_t expected_round = 1;
};

struct AckMsg {
    int site_id = 0;
    std::uint64_t round = 1;
};

// -- fixed-width scalar formats ---------------------------------------------

inline std::string format_wire_double(double x) {
    if (!(x >= 0.0) || !std::isfinite(x))
        throw ProtocolViolation("wire double must be finite and nonnegative");
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.16e", x);
    std::string s(buf);
    const auto epos = s.find('e');
    std::string exponent = s.substr(epos + 2);
    while (exponent.size() < 3) exponent.insert(exponent.begin(), '0');
    return s.substr(0, epos + 2) + exponent;  // d.16digits e (sign) 3 digits
}

inline std::string format_round(std::uint64_t round) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08llu", static_cast<unsigned long long>(round));
    return buf;
}

inline std::string format_site_id(int site_id) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%04d", site_id);
    return buf;
}

inline std::string format_count(std::int64_t count) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%020lld", static_cast<long long>(count));
    return buf;
}

inline std::uint64_t parse_fixed_u64(const std::string& s, const char* what) {
    if (s.empty()) throw ProtocolViolation(std::string("empty ") + what);
    std::uint64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') throw ProtocolViolation(std::string("bad ") + what + ": " + s);
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return v;
}

// -- payload construction ----------------------------------------------------

namespace wire_detail {

inline void append_double_array(std::string& out, const std::vector<double>& values) {
    out += '[';
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_wire_double(values[i]);
    }
    out += ']';
}

inline void append_matrix(std::string& out, const MatrixD& m) {
    out += '[';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out += ',';
        out += '[';
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_wire_double(m(i, j));
        }
        out += ']';
    }
    out += ']';
}

inline void append_exact_matrix(std::string& out, const Matrix<ExactSum>& m) {
    out += '[';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out += ',';
        out += '[';
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += '"';
            out += encode_exact_units(m(i, j).raw_units());
            out += '"';
        }
        out += ']';
    }
    out += ']';
}

inline std::string envelope(MessageType type, std::uint64_t round, const std::string& body) {
    std::string out = "{\"type\":\"";
    out += message_type_name(type);
    out += "\",\"version\":1,\"round\":\"";
    out += format_round(round);
    out += "\",\"body\":";
    out += body;
    out += '}';
    return out;
}

}  // namespace wire_detail

inline std::string serialize(const ParamsBroadcast& msg) {
    std::string body = "{\"alpha\":";
    wire_detail::append_double_array(body, msg.alpha);
    body += ",\"beta\":[";
    for (std::size_t m = 0; m < msg.beta.size(); ++m) {
        if (m) body += ',';
        wire_detail::append_matrix(body, msg.beta[m]);
    }
    body += "],\"eps_beta\":";
    body += format_wire_double(msg.eps_beta);
    body += ",\"freeze_alpha\":";
    body += msg.freeze_alpha ? '1' : '0';
    body += '}';
    return wire_detail::envelope(MessageType::ParamsBroadcast, msg.round, body);
}

inline std::string serialize(const PartialStatsMsg& msg) {
    std::string body = "{\"site_id\":\"";
    body += format_site_id(msg.site_id);
    body += "\",\"count\":\"";
    body += format_count(msg.stats.count);
    body += "\",\"gamma_stats\":[";
    for (std::size_t i = 0; i < msg.stats.gamma_stats.size(); ++i) {
        if (i) body += ',';
        body += '"';
        body += encode_exact_units(msg.stats.gamma_stats[i].raw_units());
        body += '"';
    }
    body += "],\"beta_numerators\":[";
    for (std::size_t m = 0; m < msg.stats.beta_numerators.size(); ++m) {
        if (m) body += ',';
        wire_detail::append_exact_matrix(body, msg.stats.beta_numerators[m]);
    }
    body += "],\"elbo_base\":\"";
    body += encode_exact_units(msg.stats.elbo_base.raw_units());
    body += "\"}";
    return wire_detail::envelope(MessageType::PartialStats, msg.round, body);
}

inline std::string serialize(const TerminateMsg& msg) {
    std::string body = "{\"converged\":";
    body += msg.converged ? '1' : '0';
    body += '}';
    return wire_detail::envelope(MessageType::Terminate, msg.round, body);
}

inline std::string serialize(const ResyncRequestMsg& msg) {
    std::string body = "{\"site_id\":\"";
    body += format_site_id(msg.site_id);
    body += "\"}";
    return wire_detail::envelope(MessageType::ResyncRequest, msg.expected_round, body);
}

inline std::string serialize(const AckMsg& msg) {
    std::string body = "{\"site_id\":\"";
    body += format_site_id(msg.site_id);
    body += "\"}";
    return wire_detail::envelope(MessageType::Ack, msg.round, body);
}

// -- parsing ------------------------------------------------------------------

struct ParsedMessage {
    MessageType type = MessageType::Ack;
    std::uint64_t round = 0;
    nlohmann::json body;
};

inline void require_exact_keys(const nlohmann::json& obj,
                               std::initializer_list<const char*> keys,
                               const char* what) {
    if (!obj.is_object())
        throw ProtocolViolation(std::string(what) + ": not an object");
    if (obj.size() != keys.size())
        throw ProtocolViolation(std::string(what) + ": unexpected field count");
    for (const char* key : keys)
        if (!obj.contains(key))
            throw ProtocolViolation(std::string(what) + ": missing field " + key);
}

inline ParsedMessage parse_message(const std::string& payload) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolViolation(std::string("unparseable payload: ") + e.what());
    }
    require_exact_keys(doc, {"type", "version", "round", "body"}, "message");
    if (!doc["version"].is_number_integer() || doc["version"].get<int>() != kWireVersion)
        throw ProtocolViolation("unsupported protocol version");
    const std::string type_name = doc["type"].get<std::string>();
    ParsedMessage out;
    if (type_name == "PARAMS_BROADCAST") out.type = MessageType::ParamsBroadcast;
    else if (type_name == "PARTIAL_STATS") out.type = MessageType::PartialStats;
    else if (type_name == "TERMINATE") out.type = MessageType::Terminate;
    else if (type_name == "RESYNC_REQUEST") out.type = MessageType::ResyncRequest;
    else if (type_name == "ACK") out.type = MessageType::Ack;
    else throw ProtocolViolation("unknown message type: " + type_name);
    out.round = parse_fixed_u64(doc["round"].get<std::string>(), "round");
    out.body = doc["body"];
    return out;
}

inline ParamsBroadcast decode_params_broadcast(const ParsedMessage& msg) {
    if (msg.type != MessageType::ParamsBroadcast)
        throw ProtocolViolation("expected PARAMS_BROADCAST");
    require_exact_keys(msg.body, {"alpha", "beta", "eps_beta", "freeze_alpha"},
                       "PARAMS_BROADCAST body");
    ParamsBroadcast out;
    out.round = msg.round;
    out.alpha = msg.body["alpha"].get<std::vector<double>>();
    for (const auto& matrix_json : msg.body["beta"]) {
        const std::size_t rows = matrix_json.size();
        const std::size_t cols = rows ? matrix_json[0].size() : 0;
        MatrixD m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            if (matrix_json[i].size() != cols)
                throw ProtocolViolation("ragged beta matrix");
            for (std::size_t j = 0; j < cols; ++j) m(i, j) = matrix_json[i][j].get<double>();
        }
        out.beta.push_back(std::move(m));
    }
    out.eps_beta = msg.body["eps_beta"].get<double>();
    out.freeze_alpha = msg.body["freeze_alpha"].get<int>() != 0;
    return out;
}

inline PartialStatsMsg decode_partial_stats(const ParsedMessage& msg) {
    if (msg.type != MessageType::PartialStats)
        throw ProtocolViolation("expected PARTIAL_STATS");
    require_exact_keys(msg.body,
                       {"site_id", "count", "gamma_stats", "beta_numerators", "elbo_base"},
                       "PARTIAL_STATS body");
    PartialStatsMsg out;
    out.round = msg.round;
    out.site_id = static_cast<int>(parse_fixed_u64(msg.body["site_id"].get<std::string>(),
                                                   "site_id"));
    out.stats.count = static_cast<std::int64_t>(
        parse_fixed_u64(msg.body["count"].get<std::string>(), "count"));
    for (const auto& entry : msg.body["gamma_stats"]) {
        ExactSum s;
        s.set_raw_units(decode_exact_units(entry.get<std::string>()));
        out.stats.gamma_stats.push_back(s);
    }
    for (const auto& matrix_json : msg.body["beta_numerators"]) {
        const std::size_t rows = matrix_json.size();
        const std::size_t cols = rows ? matrix_json[0].size() : 0;
        Matrix<ExactSum> m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            if (matrix_json[i].size() != cols)
                throw ProtocolViolation("ragged beta_numerators matrix");
            for (std::size_t j = 0; j < cols; ++j)
                m(i, j).set_raw_units(decode_exact_units(matrix_json[i][j].get<std::string>()));
        }
        out.stats.beta_numerators.push_back(std::move(m));
    }
    out.stats.elbo_base.set_raw_units(
        decode_exact_units(msg.body["elbo_base"].get<std::string>()));
    return out;
}

inline TerminateMsg decode_terminate(const ParsedMessage& msg) {
    if (msg.type != MessageType::Terminate) throw ProtocolViolation("expected TERMINATE");
    require_exact_keys(msg.body, {"converged"}, "TERMINATE body");
    return {msg.round, msg.body["converged"].get<int>() != 0};
}

inline ResyncRequestMsg decode_resync_request(const ParsedMessage& msg) {
    if (msg.type != MessageType::ResyncRequest)
        throw ProtocolViolation("expected RESYNC_REQUEST");
    require_exact_keys(msg.body, {"site_id"}, "RESYNC_REQUEST body");
    ResyncRequestMsg out;
    out.expected_round = msg.round;
    out.site_id = static_cast<int>(parse_fixed_u64(msg.body["site_id"].get<std::string>(),
                                                   "site_id"));
    return out;
}

inline AckMsg decode_ack(const ParsedMessage& msg) {
    if (msg.type != MessageType::Ack) throw ProtocolViolation("expected ACK");
    require_exact_keys(msg.body, {"site_id"}, "ACK body");
    AckMsg out;
    out.round = msg.round;
    out.site_id = static_cast<int>(parse_fixed_u64(msg.body["site_id"].get<std::string>(),
                                                   "site_id"));
    return out;
}

// -- framing ------------------------------------------------------------------

inline std::string encode_frame(const std::string& payload) {
    if (payload.size() > kMaxFrameBytes) throw ProtocolViolation("frame too large");
    const auto len = static_cast<std::uint32_t>(payload.size());
    std::string frame;
    frame.reserve(payload.size() + 4);
    frame.push_back(static_cast<char>((len >> 24) & 0xFF));
    frame.push_back(static_cast<char>((len >> 16) & 0xFF));
    frame.push_back(static_cast<char>((len >> 8) & 0xFF));
    frame.push_back(static_cast<char>(len & 0xFF));
    frame += payload;
    return frame;
}

inline std::uint32_t decode_frame_length(const unsigned char header[4]) {
    const std::uint32_t len = (static_cast<std::uint32_t>(header[0]) << 24) |
                              (static_cast<std::uint32_t>(header[1]) << 16) |
                              (static_cast<std::uint32_t>(header[2]) << 8) |
                              static_cast<std::uint32_t>(header[3]);
    if (len > kMaxFrameBytes) throw ProtocolViolation("frame length out of bounds");
    return len;
}

}  // namespace bc3e
