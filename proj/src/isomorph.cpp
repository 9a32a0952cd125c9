#include "isoprune/isomorph.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>

namespace isoprune {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string to_string(const VertexLabel& label) {
  std::string s = std::string(to_string(label.op_kind)) + "/" + to_string(label.axis_role) + "/" +
                  to_string(label.pattern.kind);
  if (label.pattern.kind != PatternKind::single) {
    s += "(" + std::to_string(label.pattern.block_size) + "," + std::to_string(label.pattern.stride) + "," +
         std::to_string(label.pattern.count) + ")";
  }
  return s;
}

std::string IsoSignature::text() const {
  std::string s = "E" + std::to_string(edge_count);
  for (const auto& [a, b] : label_sequence) s += ";" + to_string(a) + ">" + to_string(b);
  return s;
}

std::string IsoSignature::hash() const { return sha256_hex(text()).substr(0, 16); }

VertexLabel vertex_label(const PruningVertex& v, const ModelGraph& graph) {
  return {graph.at(v.owner_node).kind, v.axis_role, v.pattern};
}

IsoSignature signature_of(const SubStructure& sub, const ModelGraph& graph) {
  IsoSignature sig;
  sig.edge_count = sub.edges.size();
  std::vector<VertexLabel> labels;
  labels.reserve(sub.vertices.size());
  for (const PruningVertex& v : sub.vertices) labels.push_back(vertex_label(v, graph));
  for (auto [a, b] : sub.edges) sig.label_sequence.emplace_back(labels[a], labels[b]);
  // A lone vertex has no edges; its label still has to tell groups apart.
  if (sub.edges.empty() && !labels.empty()) sig.label_sequence.emplace_back(labels[0], labels[0]);
  return sig;
}

bool is_isomorphic(const SubStructure& a, const ModelGraph& graph_a, const SubStructure& b,
                   const ModelGraph& graph_b) {
  return signature_of(a, graph_a) == signature_of(b, graph_b);
}

std::vector<IsoGroup> cluster_isomorphic(const std::vector<SubStructure>& subs, const ModelGraph& graph) {
  std::map<IsoSignature, std::size_t> by_sig;
  std::vector<IsoGroup> groups;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    IsoSignature sig = signature_of(subs[i], graph);
    auto it = by_sig.find(sig);
    if (it == by_sig.end()) {
      it = by_sig.emplace(sig, groups.size()).first;
      IsoGroup g;
      g.signature = std::move(sig);
      g.family = subs[i].family;
      groups.push_back(std::move(g));
    }
    groups[it->second].members.push_back(i);
  }
  for (IsoGroup& g : groups) {
    const SubStructure& first = subs[g.members.front()];
    g.stats.member_count = g.members.size();
    g.stats.vertices_per_member = first.vertices.size();
    g.stats.params_per_member = parameter_count(graph, first);
    for (const PruningVertex& v : first.vertices) ++g.stats.label_counts[to_string(vertex_label(v, graph))];
  }
  std::sort(groups.begin(), groups.end(),
            [](const IsoGroup& a, const IsoGroup& b) { return a.signature < b.signature; });
  return groups;
}

}  // namespace isoprune
