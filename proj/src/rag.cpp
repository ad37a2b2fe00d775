#include "ctxattr/rag.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctxattr/hash.hpp"
#include "ctxattr/parallel.hpp"

namespace ctxattr {

void RetrievalConfig::validate() const {
    if (chunk_size < 1) raise(ErrorCode::InvalidConfig, "chunk_size must be >= 1");
    if (chunk_overlap < 0 || chunk_overlap >= chunk_size) {
        raise(ErrorCode::InvalidConfig, "chunk_overlap must be in [0, chunk_size)");
    }
    if (top_k < 1) raise(ErrorCode::InvalidConfig, "top_k must be >= 1");
    if (context_char_limit < 1) raise(ErrorCode::InvalidConfig, "context_char_limit must be >= 1");
}

namespace {

const std::vector<std::string>& separators() {
    static const std::vector<std::string> seps = {"\n\n", "\n", ". ", " "};
    return seps;
}

// Split keeping each separator attached to the preceding piece, so the pieces
// concatenate back to the input.
std::vector<std::string> split_keep_separator(const std::string& text, const std::string& sep) {
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t pos = text.find(sep, start);
        if (pos == std::string::npos) {
            pieces.push_back(text.substr(start));
            break;
        }
        pieces.push_back(text.substr(start, pos + sep.size() - start));
        start = pos + sep.size();
    }
    return pieces;
}

// Break text into units no longer than limit, trying coarser separators first.
void atomize(const std::string& text, std::size_t level, std::size_t limit,
             std::vector<std::string>& out) {
    if (text.empty()) return;
    if (text.size() <= limit) {
        out.push_back(text);
        return;
    }
    if (level >= separators().size()) {
        for (std::size_t i = 0; i < text.size(); i += limit) {
            out.push_back(text.substr(i, limit));
        }
        return;
    }
    auto pieces = split_keep_separator(text, separators()[level]);
    if (pieces.size() == 1) {
        atomize(text, level + 1, limit, out);
        return;
    }
    for (const auto& piece : pieces) {
        if (piece.size() <= limit) {
            out.push_back(piece);
        } else {
            atomize(piece, level + 1, limit, out);
        }
    }
}

}  // namespace

std::vector<std::string> split_document(const std::string& text, const RetrievalConfig& cfg) {
    cfg.validate();
    if (text.empty()) return {};
    const std::size_t overlap = static_cast<std::size_t>(cfg.chunk_overlap);
    const std::size_t segment_limit = static_cast<std::size_t>(cfg.chunk_size) - overlap;

    std::vector<std::string> units;
    atomize(text, 0, segment_limit, units);

    // Greedy merge of adjacent units into segments.
    std::vector<std::string> segments;
    std::string current;
    for (const auto& unit : units) {
        if (!current.empty() && current.size() + unit.size() > segment_limit) {
            segments.push_back(std::move(current));
            current.clear();
        }
        current += unit;
    }
    if (!current.empty()) segments.push_back(std::move(current));

    if (overlap == 0) return segments;
    std::vector<std::string> chunks;
    chunks.reserve(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i == 0) {
            chunks.push_back(segments[i]);
        } else {
            const std::string& prev = chunks.back();
            std::size_t take = std::min(overlap, prev.size());
            chunks.push_back(prev.substr(prev.size() - take) + segments[i]);
        }
    }
    return chunks;
}

Eigen::VectorXf HashEmbedder::embed(std::string_view text) const {
    Eigen::VectorXf v = Eigen::VectorXf::Zero(dim_);
    if (text.empty()) {
        v[0] = 1.0f;
        return v;
    }
    if (text.size() < 3) {
        v[fnv1a64(text) % static_cast<std::uint64_t>(dim_)] += 1.0f;
    } else {
        for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
            v[fnv1a64(text.substr(i, 3)) % static_cast<std::uint64_t>(dim_)] += 1.0f;
        }
    }
    v.normalize();
    return v;
}

VectorIndex VectorIndex::build(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& corpus,
    const Embedder& embedder, const RetrievalConfig& cfg) {
    cfg.validate();
    std::vector<Chunk> chunks;
    for (const auto& [dataset_id, documents] : corpus) {
        for (std::size_t d = 0; d < documents.size(); ++d) {
            auto texts = split_document(documents[d], cfg);
            for (std::size_t p = 0; p < texts.size(); ++p) {
                Chunk chunk;
                chunk.dataset_id = dataset_id;
                chunk.doc_ordinal = static_cast<std::uint32_t>(d);
                chunk.position = static_cast<std::uint32_t>(p);
                chunk.embedding = embedder.embed(texts[p]);
                chunk.text = std::move(texts[p]);
                chunks.push_back(std::move(chunk));
            }
        }
    }
    return from_chunks(std::move(chunks), embedder.dim());
}

VectorIndex VectorIndex::from_chunks(std::vector<Chunk> chunks, int dim) {
    VectorIndex index;
    index.dim_ = dim;
    index.chunks_ = std::move(chunks);
    for (auto& chunk : index.chunks_) {
        if (chunk.embedding.size() != dim) {
            raise(ErrorCode::ShapeMismatch, "chunk embedding dimension mismatch");
        }
        float norm = chunk.embedding.norm();
        if (std::abs(norm - 1.0f) > 1e-5f) {
            if (norm <= 0.0f) raise(ErrorCode::EntryOutOfRange, "zero chunk embedding");
            chunk.embedding /= norm;
        }
        auto it = std::find(index.dataset_ids_.begin(), index.dataset_ids_.end(), chunk.dataset_id);
        int ordinal;
        if (it == index.dataset_ids_.end()) {
            index.dataset_ids_.push_back(chunk.dataset_id);
            ordinal = static_cast<int>(index.dataset_ids_.size());
        } else {
            ordinal = static_cast<int>(it - index.dataset_ids_.begin()) + 1;
        }
        index.dataset_ordinal_.push_back(ordinal);
    }
    return index;
}

std::vector<std::pair<int, float>> VectorIndex::rank(const Eigen::VectorXf& query_embedding,
                                                     const Coalition& datasets,
                                                     const RetrievalConfig& cfg, int jobs) const {
    cfg.validate();
    for (int k : datasets.members()) {
        if (k > num_datasets()) {
            raise(ErrorCode::EmptyIndex, "coalition member " + std::to_string(k) +
                                             " has no indexed dataset (K=" +
                                             std::to_string(num_datasets()) + ")");
        }
    }
    std::vector<int> candidates;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        if (datasets.contains(dataset_ordinal_[i])) candidates.push_back(static_cast<int>(i));
    }
    if (candidates.empty()) {
        raise(ErrorCode::EmptyIndex, "no chunks indexed for coalition '" + datasets.key() + "'");
    }

    std::vector<float> scores(candidates.size());
    parallel_for(candidates.size(), jobs, [&](std::size_t i) {
        scores[i] = chunks_[candidates[i]].embedding.dot(query_embedding);
    });

    // Sort candidate positions by score; ties keep ingestion order.
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });

    std::vector<std::pair<int, float>> ranked;
    if (cfg.per_dataset_quota && datasets.size() > 1) {
        // Round-robin the best remaining chunk of each member dataset.
        std::vector<int> member_order = datasets.members();
        std::vector<std::vector<int>> per_dataset(member_order.size());
        for (int pos : order) {
            int ord = dataset_ordinal_[candidates[pos]];
            auto it = std::find(member_order.begin(), member_order.end(), ord);
            per_dataset[it - member_order.begin()].push_back(pos);
        }
        std::vector<std::size_t> next(member_order.size(), 0);
        while (static_cast<int>(ranked.size()) < cfg.top_k) {
            bool any = false;
            for (std::size_t d = 0;
                 d < member_order.size() && static_cast<int>(ranked.size()) < cfg.top_k; ++d) {
                if (next[d] < per_dataset[d].size()) {
                    int pos = per_dataset[d][next[d]++];
                    ranked.emplace_back(candidates[pos], scores[pos]);
                    any = true;
                }
            }
            if (!any) break;
        }
    } else {
        for (int pos : order) {
            if (static_cast<int>(ranked.size()) >= cfg.top_k) break;
            ranked.emplace_back(candidates[pos], scores[pos]);
        }
    }
    return ranked;
}

std::string VectorIndex::retrieve(const std::string& query, const Coalition& datasets,
                                  const RetrievalConfig& cfg, const Embedder& embedder,
                                  int jobs) const {
    auto ranked = rank(embedder.embed(query), datasets, cfg, jobs);
    std::string context;
    for (const auto& [idx, score] : ranked) {
        if (!context.empty()) context += "\n\n";
        context += chunks_[idx].text;
    }
    if (context.size() > static_cast<std::size_t>(cfg.context_char_limit)) {
        context.resize(cfg.context_char_limit);
    }
    return context;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) raise(ErrorCode::IoFailure, "truncated index file");
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    std::uint32_t len = get_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) raise(ErrorCode::IoFailure, "truncated index file");
    return s;
}

}  // namespace

void VectorIndex::save(std::ostream& out) const {
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u32(out, static_cast<std::uint32_t>(chunks_.size()));
    for (const auto& chunk : chunks_) {
        put_string(out, chunk.dataset_id);
        put_u32(out, chunk.position);
        put_string(out, chunk.text);
        for (int d = 0; d < dim_; ++d) {
            put_u32(out, std::bit_cast<std::uint32_t>(chunk.embedding[d]));
        }
    }
}

VectorIndex VectorIndex::load(std::istream& in) {
    int dim = static_cast<int>(get_u32(in));
    std::uint32_t count = get_u32(in);
    std::vector<Chunk> chunks;
    chunks.reserve(count);
    std::string last_dataset;
    std::uint32_t doc_ordinal = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        Chunk chunk;
        chunk.dataset_id = get_string(in);
        chunk.position = get_u32(in);
        chunk.text = get_string(in);
        chunk.embedding.resize(dim);
        for (int d = 0; d < dim; ++d) {
            chunk.embedding[d] = std::bit_cast<float>(get_u32(in));
        }
        // Document boundaries are recovered from position resets; the format
        // does not store them, and ranking only needs record order anyway.
        if (chunk.dataset_id != last_dataset) {
            doc_ordinal = 0;
            last_dataset = chunk.dataset_id;
        } else if (chunk.position == 0 && !chunks.empty()) {
            ++doc_ordinal;
        }
        chunk.doc_ordinal = doc_ordinal;
        chunks.push_back(std::move(chunk));
    }
    return from_chunks(std::move(chunks), dim);
}

void VectorIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    save(out);
}

VectorIndex VectorIndex::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoFailure, "cannot open '" + path + "'");
    return load(in);
}

std::vector<std::string> read_text_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) raise(ErrorCode::IoFailure, "not a directory: '" + dir + "'");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> documents;
    for (const auto& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) raise(ErrorCode::IoFailure, "cannot read '" + path.string() + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        documents.push_back(ss.str());
    }
    return documents;
}

}  // namespace ctxattr
