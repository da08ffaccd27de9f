#include "fedsim/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in, const std::string& path) {
    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw DataError(DataError::Kind::io, "zlib init failed for " + path);
    std::vector<unsigned char> out;
    out.reserve(in.size() * 4);
    unsigned char buf[1 << 16];
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError(DataError::Kind::truncated, "corrupt gzip stream: " + path);
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::vector<unsigned char> read_idx_bytes(const std::string& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path);
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw DataError(DataError::Kind::truncated, "truncated header: " + path);
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

} // namespace

void Dataset::validate() const {
    if (inputs.size() != size() * static_cast<std::size_t>(input_dim))
        throw DimensionError("dataset: inputs/labels length mismatch");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw DimensionError("dataset: label out of range");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_idx_bytes(images_path);
    const auto lab = read_idx_bytes(labels_path);

    if (read_be32(img, 0, images_path) != kImagesMagic)
        throw DataError(DataError::Kind::bad_magic, "not an IDX image file: " + images_path);
    if (read_be32(lab, 0, labels_path) != kLabelsMagic)
        throw DataError(DataError::Kind::bad_magic, "not an IDX label file: " + labels_path);

    const std::uint32_t n_img = read_be32(img, 4, images_path);
    const std::uint32_t rows = read_be32(img, 8, images_path);
    const std::uint32_t cols = read_be32(img, 12, images_path);
    const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
    if (n_img != n_lab)
        throw DataError(DataError::Kind::count_mismatch, "image/label counts differ: " + images_path);

    const std::size_t pix = static_cast<std::size_t>(rows) * cols;
    if (img.size() < 16 + static_cast<std::size_t>(n_img) * pix)
        throw DataError(DataError::Kind::truncated, "truncated image payload: " + images_path);
    if (lab.size() < 8 + n_lab)
        throw DataError(DataError::Kind::truncated, "truncated label payload: " + labels_path);

    Dataset ds;
    ds.input_dim = static_cast<int>(pix);
    ds.num_classes = 10;
    ds.inputs.resize(static_cast<std::size_t>(n_img) * pix);
    ds.labels.resize(n_img);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_img) * pix; ++i)
        ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_lab; ++i) {
        ds.labels[i] = static_cast<int>(lab[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    if (max_label >= ds.num_classes) ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

Dataset synthetic_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed,
                        double contrast) {
    if (classes < 2) throw DimensionError("synthetic_blobs: need at least 2 classes");
    if (dim < 1) throw DimensionError("synthetic_blobs: dim must be positive");
    if (per_class < 1) throw DimensionError("synthetic_blobs: per_class must be positive");
    if (contrast < 0.0 || contrast > 1.0)
        throw DimensionError("synthetic_blobs: contrast must be in [0, 1]");

    // Centers depend only on (class, dim, contrast): class c raises a
    // contiguous block of coordinates over a flat 0.2 background, keeping
    // centers in [0, 1].
    const int block = std::max(1, dim / classes);
    const double high = 0.2 + 0.6 * contrast;
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim, 0.2));
    for (int c = 0; c < classes; ++c) {
        const int start = (c * block) % dim;
        for (int b = 0; b < block; ++b) centers[c][(start + b) % dim] = high;
    }

    Dataset ds;
    ds.input_dim = dim;
    ds.num_classes = classes;
    ds.inputs.resize(static_cast<std::size_t>(classes) * per_class * dim);
    ds.labels.resize(static_cast<std::size_t>(classes) * per_class);

    Rng rng(derive_seed(seed, 0xb10b5));
    std::size_t idx = 0;
    for (int c = 0; c < classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            double* row = ds.inputs.data() + idx * dim;
            for (int j = 0; j < dim; ++j) {
                double v = centers[c][j];
                if (spread > 0.0) v += spread * rng.normal();
                row[j] = std::clamp(v, 0.0, 1.0);
            }
            ds.labels[idx] = c;
            ++idx;
        }
    }
    ds.validate();
    return ds;
}

Partition partition_iid(const Dataset& ds, int k, std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (k < 1 || n < static_cast<std::size_t>(k))
        throw DimensionError("partition_iid: need n >= k >= 1");

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class[ds.labels[i]].push_back(i);

    Rng rng(derive_seed(seed, 0x11d));
    Partition part;
    part.assignments.resize(k);
    // The deal cursor continues across classes so small datasets still reach
    // every client.
    std::size_t cursor = 0;
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        for (std::size_t idx : cls) {
            part.assignments[cursor % k].push_back(idx);
            ++cursor;
        }
    }
    return part;
}

Partition partition_dirichlet(const Dataset& ds, int k, double alpha, std::uint64_t seed) {
    if (alpha <= 0.0) throw DimensionError("partition_dirichlet: alpha must be positive");
    const std::size_t n = ds.size();
    if (k < 1 || n < static_cast<std::size_t>(k))
        throw DimensionError("partition_dirichlet: need n >= k >= 1");

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class[ds.labels[i]].push_back(i);

    Rng rng(derive_seed(seed, 0xd12c));
    Partition part;
    part.assignments.resize(k);

    for (auto& cls : by_class) {
        if (cls.empty()) continue;
        rng.shuffle(cls);

        std::vector<double> p(k);
        double total = 0.0;
        for (int i = 0; i < k; ++i) {
            p[i] = rng.gamma(alpha);
            total += p[i];
        }
        for (double& x : p) x /= total;

        // Largest-remainder apportionment of this class's samples.
        const std::size_t m = cls.size();
        std::vector<std::size_t> counts(k);
        std::vector<std::pair<double, int>> remainders(k);
        std::size_t assigned = 0;
        for (int i = 0; i < k; ++i) {
            const double exact = p[i] * static_cast<double>(m);
            counts[i] = static_cast<std::size_t>(exact);
            remainders[i] = {exact - static_cast<double>(counts[i]), i};
            assigned += counts[i];
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t r = 0; assigned < m; ++r, ++assigned) ++counts[remainders[r % k].second];

        std::size_t pos = 0;
        for (int i = 0; i < k; ++i) {
            for (std::size_t c = 0; c < counts[i]; ++c) part.assignments[i].push_back(cls[pos++]);
        }
    }

    // Repair: every client must own at least one sample.
    for (int i = 0; i < k; ++i) {
        while (part.assignments[i].empty()) {
            int largest = 0;
            for (int j = 1; j < k; ++j)
                if (part.assignments[j].size() > part.assignments[largest].size()) largest = j;
            if (part.assignments[largest].size() <= 1)
                throw DimensionError("partition_dirichlet: cannot repair empty client");
            part.assignments[i].push_back(part.assignments[largest].back());
            part.assignments[largest].pop_back();
        }
    }
    return part;
}

int flip_label(int y, int num_classes) {
    if (y < 0 || y >= num_classes) throw DimensionError("flip_label: label out of range");
    return (num_classes - 1) - y;
}

} // namespace fedsim
