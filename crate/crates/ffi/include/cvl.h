#ifndef CVL_H
#define CVL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvlStatus {
  CVL_STATUS_OK = 0,
  CVL_STATUS_NULL_POINTER = 1,
  /**
   * A value the caller passed is out of range or malformed.
   */
  CVL_STATUS_INVALID_ARGUMENT = 2,
  CVL_STATUS_SHAPE_MISMATCH = 3,
  CVL_STATUS_IO = 4,
  /**
   * A file on disk could not be decoded.
   */
  CVL_STATUS_FORMAT = 5,
  CVL_STATUS_PANIC = 6,
} CvlStatus;

typedef struct CvlCheckpoint CvlCheckpoint;

typedef struct CvlTextEncoder CvlTextEncoder;

typedef struct CvlVisionModel CvlVisionModel;

/**
 * Half-open pixel box `[x0, x1) x [y0, y1)`.
 */
typedef struct CvlBox {
  size_t x0;
  size_t y0;
  size_t x1;
  size_t y1;
  /**
   * Nonzero when no salient pixel was found and the box is the full frame.
   */
  uint8_t fallback;
} CvlBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. Valid until
 * the next failing call on the same thread.
 */
const char *cvl_last_error(void);

/**
 * Library version, a static nul-terminated string.
 */
const char *cvl_version(void);

enum CvlStatus cvl_checkpoint_load(const char *path, struct CvlCheckpoint **out);

/**
 * Number of named tensors in the checkpoint.
 */
enum CvlStatus cvl_checkpoint_len(const struct CvlCheckpoint *ckpt, size_t *out);

void cvl_checkpoint_free(struct CvlCheckpoint *ckpt);

/**
 * A freshly initialized text encoder with the default architecture.
 */
enum CvlStatus cvl_text_encoder_new(uint64_t seed, struct CvlTextEncoder **out);

/**
 * Text encoder stored in a (joint) checkpoint.
 */
enum CvlStatus cvl_text_encoder_from_checkpoint(const struct CvlCheckpoint *ckpt,
                                                struct CvlTextEncoder **out);

enum CvlStatus cvl_text_encoder_embed_dim(const struct CvlTextEncoder *enc, size_t *out);

/**
 * Embeds a UTF-8 description into `out[0..dim]`; `dim` must equal the
 * encoder's embedding dimension.
 */
enum CvlStatus cvl_text_encoder_embed(const struct CvlTextEncoder *enc,
                                      const char *text,
                                      double *out,
                                      size_t dim);

void cvl_text_encoder_free(struct CvlTextEncoder *enc);

enum CvlStatus cvl_vision_model_from_checkpoint(const struct CvlCheckpoint *ckpt,
                                                struct CvlVisionModel **out);

enum CvlStatus cvl_vision_model_num_classes(const struct CvlVisionModel *model, size_t *out);

/**
 * Classifies a `3 x height x width` channel-major image with values in
 * `[0, 1]`. Writes the combined (original and crop) class probabilities to
 * `scores[0..num_classes]`, the predicted class to `class_out` and the
 * saliency box to `box_out`. `class_out` and `box_out` may be null.
 */
enum CvlStatus cvl_vision_predict(const struct CvlVisionModel *model,
                                  const double *pixels,
                                  size_t height,
                                  size_t width,
                                  double *scores,
                                  size_t num_classes,
                                  size_t *class_out,
                                  struct CvlBox *box_out);

void cvl_vision_model_free(struct CvlVisionModel *model);

/**
 * Box around the largest 4-connected region of `saliency` (row-major
 * `height x width`) at or above `threshold_frac` of its maximum, padded by
 * `margin_frac` of the image side.
 */
enum CvlStatus cvl_extract_box(const double *saliency,
                               size_t height,
                               size_t width,
                               double threshold_frac,
                               double margin_frac,
                               struct CvlBox *out);

/**
 * Inner product of an image feature and a text embedding.
 */
enum CvlStatus cvl_compatibility(const double *v, const double *t, size_t dim, double *out);

/**
 * `fused[k] = vision[k] + beta * language[k]`; both inputs must be
 * probability vectors. `class_out` (may be null) receives the argmax,
 * lowest index on ties.
 */
enum CvlStatus cvl_fuse_scores(const double *vision,
                               const double *language,
                               size_t num_classes,
                               double beta,
                               double *fused,
                               size_t *class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVL_H */
