#ifndef FEDSIM_DATA_HPP
#define FEDSIM_DATA_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

// Flat sample store. Inputs are row-major [n x input_dim] in [0, 1].
struct Dataset {
    int input_dim = 0;
    int num_classes = 0;
    std::vector<double> inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> input(std::size_t i) const {
        return {inputs.data() + i * static_cast<std::size_t>(input_dim),
                static_cast<std::size_t>(input_dim)};
    }
    void validate() const;
};

// Disjoint per-client index lists into one Dataset.
struct Partition {
    std::vector<std::vector<std::size_t>> assignments;

    std::size_t clients() const { return assignments.size(); }
};

// Parses the big-endian IDX pair used by the MNIST distribution. Either file
// may be gzip-compressed; this is detected from the 1f 8b magic bytes.
// Throws DataError with kind bad_magic / truncated / count_mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian class blobs around deterministic per-class centers inside [0, 1]^dim.
// spread = 0 collapses every class onto its center. contrast scales the
// center separation (1 = full 0.2/0.8 block contrast); smaller values shrink
// the class margin relative to the spread.
Dataset synthetic_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed,
                        double contrast = 1.0);

// Class-stratified shuffle, dealt round-robin with a cursor that carries
// across classes so every client is non-empty whenever n >= k.
Partition partition_iid(const Dataset& ds, int k, std::uint64_t seed);

// Per class, proportions ~ Dir(alpha * 1_k) discretized by largest-remainder
// apportionment; empty clients repaired by stealing from the largest client.
Partition partition_dirichlet(const Dataset& ds, int k, double alpha, std::uint64_t seed);

// Label flip used by the label-flip attack: y -> (C - 1) - y.
int flip_label(int y, int num_classes);

} // namespace fedsim

#endif
