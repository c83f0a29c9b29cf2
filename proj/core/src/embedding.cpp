#include "ept/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace ept {

static_assert(std::endian::native == std::endian::little,
              "EPTB I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'P', 'T', 'B'};
constexpr std::uint32_t kVersion = 1;

void read_exact(std::istream& in, void* dst, std::size_t bytes, const char* what) {
    in.read(static_cast<char*>(dst), std::streamsize(bytes));
    if (in.gcount() != std::streamsize(bytes))
        throw IoError(std::string("load_embeddings: truncated file while reading ") + what);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    read_exact(in, &v, sizeof(v), what);
    return v;
}

}  // namespace

void EmbeddingDataset::validate() const {
    if (features.rows() < 1 || features.cols() < 1)
        throw ValidationError("dataset: N and d_f must be >= 1");
    if (Eigen::Index(labels.size()) != features.rows())
        throw ValidationError("dataset: label count does not match feature rows");
    if (num_classes == 0) throw ValidationError("dataset: num_classes must be >= 1");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes)
            throw ValidationError("dataset: label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i) + " >= num_classes");
    }
    if (!features.allFinite()) throw ValidationError("dataset: non-finite feature entry");
}

EmbeddingDataset load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_embeddings: cannot open " + path);

    char magic[4] = {};
    read_exact(in, magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("load_embeddings: bad magic bytes in " + path);
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion)
        throw FormatError("load_embeddings: unsupported version " + std::to_string(version));

    const std::uint32_t n = read_u32(in, "N");
    const std::uint32_t d = read_u32(in, "d_f");
    const std::uint32_t num_classes = read_u32(in, "num_classes");
    if (n == 0 || d == 0) throw ValidationError("load_embeddings: N and d_f must be >= 1");

    EmbeddingDataset ds;
    ds.num_classes = num_classes;
    ds.features.resize(Eigen::Index(n), Eigen::Index(d));
    read_exact(in, ds.features.data(), std::size_t(n) * d * sizeof(float), "features");
    ds.labels.resize(n);
    read_exact(in, ds.labels.data(), std::size_t(n) * sizeof(std::uint32_t), "labels");

    ds.validate();
    return ds;
}

void save_embeddings(const EmbeddingDataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_embeddings: cannot open " + path + " for writing");

    const std::uint32_t n = std::uint32_t(dataset.features.rows());
    const std::uint32_t d = std::uint32_t(dataset.features.cols());
    out.write(kMagic, 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kVersion);
    put_u32(n);
    put_u32(d);
    put_u32(dataset.num_classes);
    out.write(reinterpret_cast<const char*>(dataset.features.data()),
              std::streamsize(std::size_t(n) * d * sizeof(float)));
    out.write(reinterpret_cast<const char*>(dataset.labels.data()),
              std::streamsize(std::size_t(n) * sizeof(std::uint32_t)));
    out.flush();
    if (!out) throw IoError("save_embeddings: write failed for " + path);
}

void SynthSpec::validate() const {
    if (num_classes == 0 || dim == 0 || samples_per_class == 0)
        throw ValidationError("synth spec: num_classes, dim and samples_per_class must be >= 1");
    if (!(mean_scale > 0)) throw ValidationError("synth spec: mean_scale must be > 0");
    if (noise_std < 0) throw ValidationError("synth spec: noise_std must be >= 0");
}

EmbeddingDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const Eigen::Index d = Eigen::Index(spec.dim);
    const Eigen::Index per = Eigen::Index(spec.samples_per_class);

    EmbeddingDataset ds;
    ds.num_classes = spec.num_classes;
    ds.features.resize(Eigen::Index(spec.num_classes) * per, d);
    ds.labels.resize(std::size_t(spec.num_classes) * std::size_t(per));

    Vec mean(d);
    for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
        do {
            for (Eigen::Index k = 0; k < d; ++k) mean[k] = gauss(rng);
        } while (mean.norm() < 1e-12);
        mean *= spec.mean_scale / mean.norm();

        for (Eigen::Index s = 0; s < per; ++s) {
            const Eigen::Index row = Eigen::Index(c) * per + s;
            for (Eigen::Index k = 0; k < d; ++k)
                ds.features(row, k) = float(mean[k] + spec.noise_std * gauss(rng));
            ds.labels[std::size_t(row)] = c;
        }
    }
    return ds;
}

Mat gather_rows_sorted(const EmbeddingDataset& dataset, std::vector<std::uint32_t> indices) {
    if (indices.empty()) throw ValidationError("gather_rows_sorted: empty index set");
    std::sort(indices.begin(), indices.end());
    Mat out(Eigen::Index(indices.size()), dataset.dim());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (Eigen::Index(indices[i]) >= dataset.size())
            throw ValidationError("gather_rows_sorted: row index out of range");
        out.row(Eigen::Index(i)) = dataset.features.row(Eigen::Index(indices[i])).cast<double>();
    }
    return out;
}

}  // namespace ept
