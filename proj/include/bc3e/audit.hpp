#pragma once

// Mechanical privacy audit over a recorded session transcript. Three rules:
//   (a) every payload matches one of the declared aggregate-only schemas
//       exactly (no extra fields, no per-instance arrays or identifiers),
//   (b) every aggregator-bound payload is a PARTIAL_STATS, RESYNC_REQUEST,
//       or ACK,
//   (c) payload sizes are a function of the problem shape and message type
//       only, never of how many instances a site holds.
// Failures are report entries (with offending sequence numbers), not errors.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bc3e/transcript.hpp"
#include "bc3e/wire.hpp"

namespace bc3e {

struct AuditRuleResult {
    std::string name;
    bool pass = true;
    std::vector<std::uint64_t> offending_seqs;
    std::string detail;
};

struct AuditReport {
    std::vector<AuditRuleResult> rules;
    // observed payload byte length per message type, for cross-run checks
    std::map<std::string, std::size_t> payload_bytes_by_type;

    bool all_pass() const {
        for (const auto& r : rules)
            if (!r.pass) return false;
        return true;
    }

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& r : rules) {
            os << (r.pass ? "PASS" : "FAIL") << "  " << r.name;
            if (!r.pass) {
                os << "  [" << r.detail << "; offending seq:";
                for (auto s : r.offending_seqs) os << " " << s;
                os << "]";
            }
            os << "\n";
        }
        for (const auto& [type, bytes] : payload_bytes_by_type)
            os << "size  " << type << " = " << bytes << " bytes\n";
        return os.str();
    }
};

namespace audit_detail {

struct ShapeInfo {
    std::size_t n_classes = 0;
    std::vector<std::size_t> clusters_per;
};

// First well-formed broadcast fixes the shape every later message must match.
inline std::optional<ShapeInfo> shape_from_broadcast(const ParsedMessage& msg) {
    try {
        const ParamsBroadcast bc = decode_params_broadcast(msg);
        ShapeInfo info;
        info.n_classes = bc.alpha.size();
        for (const auto& b : bc.beta) info.clusters_per.push_back(b.cols());
        return info;
    } catch (const Error&) {
        return std::nullopt;
    }
}

inline bool shapes_consistent(const ParsedMessage& msg, const ShapeInfo& shape,
                              std::string& why) {
    try {
        switch (msg.type) {
            case MessageType::ParamsBroadcast: {
                const ParamsBroadcast bc = decode_params_broadcast(msg);
                if (bc.alpha.size() != shape.n_classes) {
                    why = "alpha length differs from session shape";
                    return false;
                }
                if (bc.beta.size() != shape.clusters_per.size()) {
                    why = "beta count differs from session shape";
                    return false;
                }
                for (std::size_t m = 0; m < bc.beta.size(); ++m)
                    if (bc.beta[m].rows() != shape.n_classes ||
                        bc.beta[m].cols() != shape.clusters_per[m]) {
                        why = "beta matrix dimensions differ from session shape";
                        return false;
                    }
                return true;
            }
            case MessageType::PartialStats: {
                const PartialStatsMsg partial = decode_partial_stats(msg);
                if (partial.stats.gamma_stats.size() != shape.n_classes) {
                    why = "gamma_stats length differs from session shape";
                    return false;
                }
                if (partial.stats.beta_numerators.size() != shape.clusters_per.size()) {
                    why = "beta_numerators count differs from session shape";
                    return false;
                }
                for (std::size_t m = 0; m < partial.stats.beta_numerators.size(); ++m)
                    if (partial.stats.beta_numerators[m].rows() != shape.n_classes ||
                        partial.stats.beta_numerators[m].cols() != shape.clusters_per[m]) {
                        why = "beta_numerators dimensions differ from session shape";
                        return false;
                    }
                return true;
            }
            default:
                return true;
        }
    } catch (const Error& e) {
        why = e.what();
        return false;
    }
}

}  // namespace audit_detail

inline AuditReport audit_privacy(const std::vector<TranscriptEntry>& transcript) {
    AuditRuleResult schema;
    schema.name = "schema: aggregate-only fields, exact schema match";
    AuditRuleResult direction;
    direction.name = "direction: aggregator-bound payloads are aggregate types";
    AuditRuleResult sizes;
    sizes.name = "sizes: payload length depends on shape and type only";

    std::optional<audit_detail::ShapeInfo> shape;
    std::map<std::string, std::size_t> size_of_type;
    AuditReport report;

    for (const auto& entry : transcript) {
        ParsedMessage msg;
        try {
            msg = parse_message(entry.payload);
            // Strict decode catches injected fields and wrong field types.
            switch (msg.type) {
                case MessageType::ParamsBroadcast: (void)decode_params_broadcast(msg); break;
                case MessageType::PartialStats: (void)decode_partial_stats(msg); break;
                case MessageType::Terminate: (void)decode_terminate(msg); break;
                case MessageType::ResyncRequest: (void)decode_resync_request(msg); break;
                case MessageType::Ack: (void)decode_ack(msg); break;
            }
        } catch (const Error& e) {
            schema.pass = false;
            schema.offending_seqs.push_back(entry.seq);
            if (schema.detail.empty()) schema.detail = e.what();
            continue;
        }

        if (!shape.has_value() && msg.type == MessageType::ParamsBroadcast)
            shape = audit_detail::shape_from_broadcast(msg);
        if (shape.has_value()) {
            std::string why;
            if (!audit_detail::shapes_consistent(msg, *shape, why)) {
                schema.pass = false;
                schema.offending_seqs.push_back(entry.seq);
                if (schema.detail.empty()) schema.detail = why;
                continue;
            }
        }

        if (entry.direction == "to_aggregator" && msg.type != MessageType::PartialStats &&
            msg.type != MessageType::ResyncRequest && msg.type != MessageType::Ack) {
            direction.pass = false;
            direction.offending_seqs.push_back(entry.seq);
            if (direction.detail.empty())
                direction.detail = std::string("aggregator received ") +
                                   message_type_name(msg.type);
        }

        const std::string type_name = message_type_name(msg.type);
        auto [it, inserted] = size_of_type.try_emplace(type_name, entry.payload.size());
        if (!inserted && it->second != entry.payload.size()) {
            sizes.pass = false;
            sizes.offending_seqs.push_back(entry.seq);
            if (sizes.detail.empty())
                sizes.detail = type_name + " payload length varies within the session";
        }
    }

    report.payload_bytes_by_type = std::move(size_of_type);
    report.rules = {std::move(schema), std::move(direction), std::move(sizes)};
    return report;
}

}  // namespace bc3e
