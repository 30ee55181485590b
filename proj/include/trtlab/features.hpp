#pragma once

#include <string>
#include <vector>

#include "trtlab/depth_targets.hpp"
#include "trtlab/grid.hpp"
#include "trtlab/model.hpp"
#include "trtlab/scenegen.hpp"
#include "trtlab/vocab.hpp"

namespace trtlab {

// The image reaches the model as a fixed prefix of feature tokens: one slot
// token per potential marker (slots follow canonical (y, x) order, never the
// label order, so the features carry no information about which letter names
// which point) and a bank of vertical strip tokens that pool image content.
//
// Feature layout per token row:
//   [0] is_slot      1 for marker slots, 0 for strips
//   [1] present      slot backed by a real marker / strip always 1
//   [2] x            marker x / strip center x, divided by width
//   [3] y            marker y / 0.5 for strips
//   [4] leak         marker depth / 255, only when leak_depth is set
//   [5] bump_pool    analytic Gaussian marker mass (in-bounds for slots,
//                    inside the strip for strips)
//   [6] app_pool     appearance mean (16x16 window for slots, strip for strips)
//   [7] reserved     always 0
struct ImageInterfaceConfig {
    int slot_tokens = 5;
    int strip_tokens = 11;
    int features = 8;
    double bump_sigma = 8.0;
    bool leak_depth = false;

    int tokens() const { return slot_tokens + strip_tokens; }
    void validate() const;
};

Grid featurize_image(const std::vector<LabeledPoint> & points, const Grid & depth,
                     const Grid & appearance, int channels, const ImageInterfaceConfig & cfg);

// Assembles the teacher-forced sequence:
//   BOS, image tokens, prompt tokens, DEPTH_START, span, DEPTH_END, (, letter, )
// with LM supervision on the response structure (DEPTH_START from the last
// prompt position, DEPTH_END, the parenthesized answer, EOS) and depth
// supervision on the span slots. Span content positions carry no LM targets.
BuiltSequence build_training_sequence(const Example & ex, const Grid & image_feats,
                                      const Grid & span_z, const std::vector<int> & span_ids,
                                      const Vocabulary & vocab);

// Everything one example contributes to training or to the replacement suite.
struct PreparedExample {
    Example ex;
    Grid image_feats;
    Grid span_z;               // continuous span inputs/targets (K, D)
    std::vector<int> span_ids; // discrete span ids (vocabulary ids)
    BuiltSequence seq;
};

// Loads the example's scene grids, featurizes the image, resolves the span
// from the target cache (resized and quantized through the codebook in
// discrete mode), and builds the sequence. `codebook` must be non-null
// exactly when cfg.discrete is set.
PreparedExample prepare_example(const Example & ex, const std::string & dataset_dir,
                                const DatasetMeta & meta, const Vocabulary & vocab,
                                const TargetConfig & targets, const ImageInterfaceConfig & image,
                                const Codebook * codebook);

} // namespace trtlab
