#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "amsq/netlist.hpp"

namespace amsq {

enum class AnnotationStrategy { SequentialPortWise, GlobalSinglePass };

struct AnnotationRequest {
    Netlist netlist;
    // Empty under GlobalSinglePass: the server labels every Unknown port.
    std::string port_name;
    AnnotationStrategy strategy = AnnotationStrategy::SequentialPortWise;
};

struct AnnotationResponse {
    std::string port;
    std::string label;
    double confidence = 0.0;
    // GlobalSinglePass answers: port -> label.
    std::map<std::string, std::string> labels;
};

class AnnotatorClient {
public:
    virtual ~AnnotatorClient() = default;
    virtual AnnotationResponse annotate(const AnnotationRequest& request) = 0;
};

// Offline stand-in for a multimodal annotator: answers from heuristic_annotate.
class HeuristicAnnotator final : public AnnotatorClient {
public:
    AnnotationResponse annotate(const AnnotationRequest& request) override;
};

// Client for the annotator HTTP contract:
//   POST /annotate  {"netlist": str, "port": str, "vocabulary": [str]}
//   -> {"port": str, "label": str, "confidence": number}
// A GlobalSinglePass request sends "port": "" and expects "labels": {port: label}.
class HttpAnnotatorClient final : public AnnotatorClient {
public:
    struct Options {
        std::string url = "http://127.0.0.1:8808";
        std::chrono::milliseconds timeout{10000};
        int retries = 2;
    };

    explicit HttpAnnotatorClient(Options options);
    AnnotationResponse annotate(const AnnotationRequest& request) override;

private:
    Options options_;
};

// Resolves every Unknown port through `client`. SequentialPortWise sends one
// request per Unknown port (optionally `workers` at a time); GlobalSinglePass
// sends exactly one. Throws AnnotatorUnavailable or AnnotatorInvalidLabel.
Netlist annotate_ports(const Netlist& netlist, AnnotatorClient& client,
                       AnnotationStrategy strategy = AnnotationStrategy::SequentialPortWise, int workers = 1);

// Rule-table annotation of Unknown ports: name patterns first, then
// connectivity tie-breaks, then Bias for whatever is left.
Netlist heuristic_annotate(const Netlist& netlist);

struct PolarityAssignment {
    std::map<std::string, PortType> mapping;
    int permutation_index = 0;
    friend bool operator==(const PolarityAssignment&, const PolarityAssignment&) = default;
};

// 1 assignment when nothing is ambiguous, 2 for one structural input pair or
// one output pair, 4 for both. Throws DegenerateDiffPair when a MOS pair
// sharing a source has both gates on the same input port.
std::vector<PolarityAssignment> enumerate_polarities(const Netlist& netlist);

Netlist apply_polarity(const Netlist& netlist, const PolarityAssignment& assignment);

} // namespace amsq
