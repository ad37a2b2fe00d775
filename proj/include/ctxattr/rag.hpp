#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ctxattr/core.hpp"

namespace ctxattr {

struct RetrievalConfig {
    int chunk_size = 512;
    int chunk_overlap = 0;
    int top_k = 3;
    int context_char_limit = 2000;
    /// Sensitivity knob: round-robin the best chunk of each coalition member
    /// instead of a single global top-k over the union.
    bool per_dataset_quota = false;

    void validate() const;
};

struct Chunk {
    std::string dataset_id;
    std::uint32_t doc_ordinal = 0;  // ingestion order of the source document
    std::uint32_t position = 0;     // ordinal within the source document
    std::string text;
    Eigen::VectorXf embedding;      // unit L2 norm
};

/// Recursive splitting on the separator hierarchy (paragraph break, newline,
/// sentence end, space, character) so every chunk is <= chunk_size.
/// Separators stay attached to the preceding piece, so with zero overlap the
/// concatenation of the returned texts reproduces the input exactly. With
/// overlap > 0, every chunk after the first starts with the previous chunk's
/// last min(overlap, len(prev)) characters.
std::vector<std::string> split_document(const std::string& text, const RetrievalConfig& cfg);

class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual Eigen::VectorXf embed(std::string_view text) const = 0;
    virtual int dim() const = 0;
};

/// Built-in test embedder: character 3-grams hashed into buckets, then L2
/// normalized. Deterministic and seedless; identical texts always collide and
/// near-identical texts are near in cosine.
class HashEmbedder : public Embedder {
  public:
    explicit HashEmbedder(int dim = 256) : dim_(dim) {}

    Eigen::VectorXf embed(std::string_view text) const override;
    int dim() const override { return dim_; }

  private:
    int dim_;
};

/// In-memory exhaustive-scan vector index. Immutable once built; concurrent
/// reads are safe. Coalition indices 1..K refer to datasets in registration
/// order.
class VectorIndex {
  public:
    /// corpus: ordered (dataset_id, documents) pairs.
    static VectorIndex build(
        const std::vector<std::pair<std::string, std::vector<std::string>>>& corpus,
        const Embedder& embedder, const RetrievalConfig& cfg);

    /// Build from pre-embedded chunks (tests with hand-set embeddings, load()).
    static VectorIndex from_chunks(std::vector<Chunk> chunks, int dim);

    const std::vector<Chunk>& chunks() const { return chunks_; }
    const std::vector<std::string>& dataset_ids() const { return dataset_ids_; }
    int num_datasets() const { return static_cast<int>(dataset_ids_.size()); }
    int dim() const { return dim_; }

    /// Embed the query, rank the coalition's chunks by cosine similarity,
    /// join the top_k texts with blank lines in rank order, truncate to
    /// context_char_limit. Ties break by ingestion order (dataset, document,
    /// position), so retrieval is byte-deterministic.
    std::string retrieve(const std::string& query, const Coalition& datasets,
                         const RetrievalConfig& cfg, const Embedder& embedder,
                         int jobs = 1) const;

    /// Top chunk indices and scores backing retrieve(), exposed for tests.
    std::vector<std::pair<int, float>> rank(const Eigen::VectorXf& query_embedding,
                                            const Coalition& datasets, const RetrievalConfig& cfg,
                                            int jobs = 1) const;

    /// Flat binary format: u32 dim, u32 count, then per chunk: length-prefixed
    /// dataset_id, u32 position, length-prefixed text, dim little-endian f32.
    void save(std::ostream& out) const;
    static VectorIndex load(std::istream& in);
    void save(const std::string& path) const;
    static VectorIndex load_file(const std::string& path);

  private:
    int dim_ = 0;
    std::vector<Chunk> chunks_;
    std::vector<std::string> dataset_ids_;
    std::vector<int> dataset_ordinal_;  // per chunk, 1-based coalition index
};

/// Context provider boundary used by the attribution pipelines.
class Retriever {
  public:
    virtual ~Retriever() = default;
    virtual std::string retrieve(const std::string& query, const Coalition& datasets) const = 0;
    virtual int num_datasets() const = 0;
    virtual std::vector<std::string> dataset_ids() const = 0;
};

class IndexRetriever : public Retriever {
  public:
    IndexRetriever(const VectorIndex& index, const Embedder& embedder, RetrievalConfig cfg,
                   int jobs = 1)
        : index_(index), embedder_(embedder), cfg_(cfg), jobs_(jobs) {}

    std::string retrieve(const std::string& query, const Coalition& datasets) const override {
        return index_.retrieve(query, datasets, cfg_, embedder_, jobs_);
    }
    int num_datasets() const override { return index_.num_datasets(); }
    std::vector<std::string> dataset_ids() const override { return index_.dataset_ids(); }

  private:
    const VectorIndex& index_;
    const Embedder& embedder_;
    RetrievalConfig cfg_;
    int jobs_;
};

/// Reads every regular file in the directory as one UTF-8 document, in
/// lexicographic filename order.
std::vector<std::string> read_text_dir(const std::string& dir);

}  // namespace ctxattr
