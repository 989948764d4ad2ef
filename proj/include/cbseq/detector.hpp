#pragma once

// Glue between behavior sequences, embedding models and the classifier:
// dataset preparation, detection, and the detection result record.

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cbseq/artifacts.hpp"
#include "cbseq/common.hpp"
#include "cbseq/embedding.hpp"
#include "cbseq/msformer.hpp"

namespace cbseq {

struct DetectionResult {
  int cluster_id = 0;
  std::vector<std::size_t> channel_ids;
  double probability_malware = 0.0;
  bool predicted_malware = false;
};

/// Embeds the first max_len tokens of a behavior sequence into the four
/// input matrices the classifier consumes.
template <typename S = float>
TrainExampleT<S> to_example(const std::array<const EmbeddingModel*, 4>& models,
                            const ChannelSequence& tokens, int label,
                            int max_len) {
  auto emb = embed_sequence(models, tokens,
                            static_cast<std::size_t>(max_len));
  TrainExampleT<S> ex;
  ex.valid = static_cast<int>(emb.length);
  ex.label = label;
  for (int s = 0; s < 4; ++s) {
    MatT<S> m(emb.length, emb.dim);
    for (std::size_t i = 0; i < emb.length; ++i) {
      const float* row = emb.row(s, i);
      for (int d = 0; d < emb.dim; ++d)
        m(static_cast<Eigen::Index>(i), d) = static_cast<S>(row[d]);
    }
    ex.emb[static_cast<std::size_t>(s)] = std::move(m);
  }
  return ex;
}

/// Labeled dataset from behavior-sequence artifacts; unlabeled sequences
/// are skipped (they cannot supervise training or scoring).
inline std::vector<TrainExample> make_dataset(
    const std::array<const EmbeddingModel*, 4>& models,
    const std::vector<BehaviorSeqArtifact>& seqs, int max_len,
    std::vector<std::size_t>* kept = nullptr) {
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].label == Label::Unlabeled) continue;
    out.push_back(to_example<float>(models, seqs[i].tokens,
                                    seqs[i].label == Label::Malware ? 1 : 0,
                                    max_len));
    if (kept) kept->push_back(i);
  }
  return out;
}

/// Scores every sequence; the cluster verdict stands for all member
/// channels.
inline std::vector<DetectionResult> detect(
    const Msformer& model, const std::array<const EmbeddingModel*, 4>& models,
    const std::vector<BehaviorSeqArtifact>& seqs, double threshold = 0.5) {
  for (const auto* m : models)
    if (!m) throw Error("detect", "missing embedding model");
  std::vector<DetectionResult> out;
  out.reserve(seqs.size());
  for (const auto& bs : seqs) {
    auto ex = to_example<float>(models, bs.tokens, 0, model.cfg.max_len);
    auto fwd = msformer_forward(model, ex.emb, ex.valid);
    DetectionResult r;
    r.cluster_id = bs.cluster_id;
    r.channel_ids = bs.channel_ids;
    r.probability_malware = static_cast<double>(fwd.probs[1]);
    r.predicted_malware = r.probability_malware >= threshold;
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_detections_csv(const std::vector<DetectionResult>& results,
                                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("detect", "cannot write " + path);
  out << "cluster_id,channels,p_malware,verdict\n";
  for (const auto& r : results) {
    out << r.cluster_id << ',';
    for (std::size_t i = 0; i < r.channel_ids.size(); ++i) {
      if (i) out << ';';
      out << r.channel_ids[i];
    }
    out << ',' << format_double(r.probability_malware) << ','
        << (r.predicted_malware ? "malware" : "benign") << '\n';
  }
}

}  // namespace cbseq
