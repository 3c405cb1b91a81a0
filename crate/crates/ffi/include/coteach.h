#ifndef COTEACH_H
#define COTEACH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtNoiseKind {
  CT_NOISE_KIND_SYMMETRIC = 0,
  CT_NOISE_KIND_PAIR = 1,
  CT_NOISE_KIND_IDENTITY = 2,
} CtNoiseKind;

typedef enum CtScheduleKind {
  CT_SCHEDULE_KIND_CONSTANT_FLOOR = 0,
  CT_SCHEDULE_KIND_SLOW_DECREASE = 1,
} CtScheduleKind;

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_CONFIG = 2,
  CT_STATUS_INPUT = 3,
  CT_STATUS_FORMAT = 4,
  CT_STATUS_NUMERICAL = 5,
  CT_STATUS_IO = 6,
  CT_STATUS_PANIC = 7,
} CtStatus;

typedef struct CtNet CtNet;

typedef struct CtTransitionMatrix CtTransitionMatrix;

// Summary of one training run. Values that do not apply (for example the
// second network of a single-network strategy) are NaN.
typedef struct CtRunSummary {
  size_t epochs;
  double empirical_noise_rate;
  double final_test_acc_1;
  double mean_acc_1;
  double max_acc_1;
  double mean_acc_2;
  double max_acc_2;
  double peak_acc_1;
  double mean_tv_last_quarter;
  double mean_purity;
} CtRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// success. Valid until the next `ct_` call on the same thread.
const char *ct_last_error_message(void);

enum CtStatus ct_transition_matrix_build(enum CtNoiseKind kind,
                                         double tau,
                                         size_t num_classes,
                                         struct CtTransitionMatrix **out);

// Copies a row-major `num_classes * num_classes` matrix.
enum CtStatus ct_transition_matrix_from_rows(const double *values,
                                             size_t num_classes,
                                             struct CtTransitionMatrix **out);

enum CtStatus ct_transition_matrix_num_classes(const struct CtTransitionMatrix *q, size_t *out);

enum CtStatus ct_transition_matrix_get(const struct CtTransitionMatrix *q,
                                       size_t row,
                                       size_t col,
                                       double *out);

void ct_transition_matrix_free(struct CtTransitionMatrix *q);

// Writes `n` corrupted labels to `noisy`.
enum CtStatus ct_corrupt_labels(const struct CtTransitionMatrix *q,
                                const size_t *clean,
                                size_t n,
                                uint64_t seed,
                                size_t *noisy);

enum CtStatus ct_lambda_schedule(size_t epoch,
                                 double tau,
                                 size_t e_k,
                                 size_t e_max,
                                 enum CtScheduleKind kind,
                                 double *out);

// `selected` must hold `n` entries; `*selected_len` receives the count used.
enum CtStatus ct_select_small_loss(const double *losses,
                                   size_t n,
                                   double keep_fraction,
                                   size_t *selected,
                                   size_t *selected_len);

// `selected` must hold `n` entries; `*selected_len` receives the count used.
enum CtStatus ct_select_disagreement(const size_t *preds1,
                                     const size_t *preds2,
                                     size_t n,
                                     size_t *selected,
                                     size_t *selected_len);

// Mean total variation between two row-major `rows * cols` probability tables.
enum CtStatus ct_total_variation(const double *probs1,
                                 const double *probs2,
                                 size_t rows,
                                 size_t cols,
                                 double *out);

// Glorot-initialized ReLU MLP; `sizes` lists input, hidden and output widths.
enum CtStatus ct_net_new(const size_t *sizes, size_t num_sizes, uint64_t seed, struct CtNet **out);

enum CtStatus ct_net_dims(const struct CtNet *net, size_t *input_dim, size_t *num_classes);

// Softmax outputs for `rows` inputs; `probs` holds `rows * num_classes`.
enum CtStatus ct_net_forward(const struct CtNet *net,
                             const double *features,
                             size_t rows,
                             double *probs);

enum CtStatus ct_net_predict(const struct CtNet *net,
                             const double *features,
                             size_t rows,
                             size_t *preds);

void ct_net_free(struct CtNet *net);

// Runs a JSON experiment config. `out_dir` may be NULL to use the
// config's `output_dir`. `summary` may be NULL.
enum CtStatus ct_experiment_run(const char *config_path,
                                const char *out_dir,
                                struct CtRunSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COTEACH_H */
