/*
 * semcomm: semantic image transmission simulator, C interface.
 *
 * Conventions
 *   - Every function returns a semc_status; SEMC_OK is 0.
 *   - On failure, semc_last_error() returns a message for the calling thread
 *     ("module/stage: detail"); it stays valid until the next call on that
 *     thread. Output arguments are left untouched on failure.
 *   - Handles are opaque and owned by the caller; release each with its
 *     *_free function (NULL is accepted and ignored).
 *   - Strings are UTF-8, NUL-terminated. Paths are file-system paths.
 *   - A handle may be used from several threads only for read-only calls.
 */
#ifndef SEMCOMM_SEMCOMM_H
#define SEMCOMM_SEMCOMM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SEMC_API __declspec(dllexport)
#elif defined(__GNUC__)
#define SEMC_API __attribute__((visibility("default")))
#else
#define SEMC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum semc_status {
  SEMC_OK = 0,
  SEMC_INVALID_PARAMETER = 1,
  SEMC_INVALID_INPUT = 2,
  SEMC_INVALID_CONFIG = 3,
  SEMC_INVALID_LABEL = 4,
  SEMC_INVALID_RANK = 5,
  SEMC_INVALID_SPEC = 6,
  SEMC_INVALID_TARGET = 7,
  SEMC_NUMERIC_FAILURE = 8,
  SEMC_PARSE_ERROR = 9,
  SEMC_OOV_ERROR = 10,
  SEMC_DEGENERATE_INPUT = 11,
  SEMC_DEGENERATE_CHANNEL = 12,
  SEMC_PRECONDITION_VIOLATION = 13,
  SEMC_DIVERGED = 14,
  SEMC_TRAINING_DIVERGED = 15,
  SEMC_SINGULAR_FEATURE = 16,
  SEMC_TOO_LARGE = 17,
  SEMC_NOT_A_PACKET = 18,
  SEMC_CORRUPT_PACKET = 19,
  SEMC_TRUNCATED_PACKET = 20,
  SEMC_IO_ERROR = 21,
  SEMC_NULL_ARGUMENT = 100, /* a required pointer argument was NULL */
  SEMC_INTERNAL = 101       /* unexpected failure (e.g. out of memory) */
} semc_status;

/* Stable kebab-case name of a status ("invalid-config", ...); "unknown" otherwise. */
SEMC_API const char* semc_status_name(semc_status status);
/* Message of the last failed call on this thread ("" if none). */
SEMC_API const char* semc_last_error(void);
/* Library version, "MAJOR.MINOR.PATCH". */
SEMC_API const char* semc_version(void);

/* ---------------------------------------------------------------- buffers */

/* Owned byte string: packets, CSV text, JSON reports. */
typedef struct semc_buffer semc_buffer;

SEMC_API semc_status semc_buffer_create(const void* data, size_t size, semc_buffer** out);
SEMC_API semc_status semc_buffer_read_file(const char* path, semc_buffer** out);
SEMC_API semc_status semc_buffer_write_file(const semc_buffer* buf, const char* path);
/* The data pointer stays valid until the buffer is freed. Text buffers are
 * additionally NUL-terminated (not counted in size). */
SEMC_API semc_status semc_buffer_data(const semc_buffer* buf, const uint8_t** data, size_t* size);
SEMC_API void semc_buffer_free(semc_buffer* buf);

/* ----------------------------------------------------------- images/masks */

typedef struct semc_image semc_image; /* 8-bit RGB, row-major, interleaved */
typedef struct semc_mask semc_mask;   /* one 0/1 byte per pixel, 1 = key */

/* PNG (converted to 8-bit RGB) or binary PPM (P6). */
SEMC_API semc_status semc_image_load(const char* path, semc_image** out);
/* PNG when the extension is .png, binary PPM otherwise. */
SEMC_API semc_status semc_image_save(const semc_image* img, const char* path);
/* Copies height*width*3 bytes. */
SEMC_API semc_status semc_image_create(size_t height, size_t width, const uint8_t* rgb, semc_image** out);
SEMC_API semc_status semc_image_size(const semc_image* img, size_t* height, size_t* width);
SEMC_API semc_status semc_image_pixels(const semc_image* img, const uint8_t** rgb);
SEMC_API void semc_image_free(semc_image* img);

/* PNG (converted to grey; nonzero is key) or binary PBM (P4). With
 * ref != NULL the mask must match the image's dimensions. */
SEMC_API semc_status semc_mask_load(const char* path, const semc_image* ref, semc_mask** out);
/* PNG (0/255) when the extension is .png, binary PBM otherwise. */
SEMC_API semc_status semc_mask_save(const semc_mask* mask, const char* path);
SEMC_API semc_status semc_mask_create(size_t height, size_t width, const uint8_t* bits, semc_mask** out);
/* Centred rectangle covering round(alpha*H*W) pixels. */
SEMC_API semc_status semc_mask_centered(size_t height, size_t width, double alpha, semc_mask** out);
SEMC_API semc_status semc_mask_size(const semc_mask* mask, size_t* height, size_t* width, size_t* key_pixels);
SEMC_API semc_status semc_mask_bits(const semc_mask* mask, const uint8_t** bits);
SEMC_API void semc_mask_free(semc_mask* mask);

/* Saliency segmentation: pixels whose saliency is at or above the given
 * quantile become key pixels. */
SEMC_API semc_status semc_segment(const semc_image* img, double quantile, semc_mask** out);

/* --------------------------------------------------------------- metrics */

typedef struct semc_metrics {
  double mse;
  double psnr_db;
  double ssim;
  double iou;
  double hist_similarity;
  double keypoint_similarity;
} semc_metrics;

/* Full report; masks NULL -> saliency masks of both images at `quantile`. */
SEMC_API semc_status semc_metrics_compare(const semc_image* original, const semc_image* reconstructed,
                                          const semc_mask* mask_original, const semc_mask* mask_reconstructed,
                                          double quantile, semc_metrics* out);

/* ------------------------------------------------------------ experiments */

typedef struct semc_experiment semc_experiment;

/* Parses a config file (relative input paths resolve against its directory)
 * or config text (against the working directory). `overrides` holds
 * n_overrides "key = value" lines applied after the file, then SEMCOMM_SEED
 * from the environment overrides the seed; the result is validated. */
SEMC_API semc_status semc_experiment_load(const char* path, const char* const* overrides, size_t n_overrides,
                                          semc_experiment** out);
SEMC_API semc_status semc_experiment_parse(const char* text, const char* const* overrides, size_t n_overrides,
                                           semc_experiment** out);
/* Effective seed, output directory (valid while the handle lives). */
SEMC_API semc_status semc_experiment_seed(const semc_experiment* exp, uint64_t* seed);
SEMC_API semc_status semc_experiment_out_dir(const semc_experiment* exp, const char** dir);
/* First configured SNR in dB (the single-run operating point). */
SEMC_API semc_status semc_experiment_snr_db(const semc_experiment* exp, double* snr_db);
/* Input of a single run: configured image (else a synthetic scene) and its
 * mask (mask file, else centred at the first alpha, else saliency). */
SEMC_API semc_status semc_experiment_input(const semc_experiment* exp, semc_image** image, semc_mask** mask);
/* The same mask rule applied to a caller-supplied image. */
SEMC_API semc_status semc_experiment_mask(const semc_experiment* exp, const semc_image* image, semc_mask** mask);
SEMC_API void semc_experiment_free(semc_experiment* exp);

/* --------------------------------------------------------- staged pipeline */

/* Transmitter: key features + descriptor -> serialized packet. prompts = 0
 * sends no descriptor (the receiver then samples unconditionally). */
SEMC_API semc_status semc_encode(const semc_experiment* exp, const semc_image* img, const semc_mask* mask,
                                 int prompts, semc_buffer** packet);

/* Channel state the receiver needs. */
typedef struct semc_channel_state {
  double snr_db;
  double sigma; /* noise standard deviation */
  double gain;  /* gain the receiver divided by (1 when not equalized) */
} semc_channel_state;

/* Passes the packet's latent through the configured channel (single-run
 * stream); returns the received packet and the channel state. */
SEMC_API semc_status semc_transmit(const semc_experiment* exp, const semc_buffer* packet, double snr_db,
                                   semc_buffer** received, semc_channel_state* state);

/* Receiver: packet -> reconstruction and its key mask. state NULL means a
 * noiseless channel. */
SEMC_API semc_status semc_decode(const semc_experiment* exp, const semc_buffer* received,
                                 const semc_channel_state* state, semc_image** reconstruction, semc_mask** mask);

/* ------------------------------------------------------ end-to-end runs */

typedef struct semc_result semc_result;

/* encode -> wire round trip -> transmit -> decode -> metrics, at the first
 * configured SNR and prompt setting unless overridden in the config. */
SEMC_API semc_status semc_pipeline(const semc_experiment* exp, const semc_image* img, const semc_mask* mask,
                                   semc_result** out);
SEMC_API semc_status semc_result_image(const semc_result* res, const semc_image** img);
SEMC_API semc_status semc_result_metrics(const semc_result* res, semc_metrics* out);
SEMC_API semc_status semc_result_overhead(const semc_result* res, size_t* bytes);
/* CSV header line and the result's row (sweep schema, trial 0). */
SEMC_API semc_status semc_result_csv(const semc_result* res, semc_buffer** csv);
SEMC_API void semc_result_free(semc_result* res);

/* Grid sweep; CSV with a header, one row per trial and mean/std summary rows. */
SEMC_API semc_status semc_sweep(const semc_experiment* exp, semc_buffer** csv);

typedef struct semc_bound_fit {
  double c1, c2, c3;
  double inflation;
  size_t fit_points;
  size_t held_out;
  size_t covered;
  double coverage;
} semc_bound_fit;

/* Fits distortion <= C1 (1-alpha)^(-1/2) + C2 sigma sqrt(k) + C3 eps on half
 * of the grid and checks it on the other half re-run with new seeds. */
SEMC_API semc_status semc_fit_bound(const semc_experiment* exp, semc_bound_fit* fit, semc_buffer** csv);

/* --------------------------------------------------- model-side utilities */

/* Quantizes an SCM1 toy checkpoint: tensors matching any critical glob stay
 * full precision, the rest become 4-bit blocks written to `out_path` (QNT1).
 * `report` is JSON (partition, error statistics, warnings). */
SEMC_API semc_status semc_quantize(const char* checkpoint_path, const char* const* critical, size_t n_critical,
                                   const char* out_path, semc_buffer** report);

/* Memory accounting of a "name count precision" spec (precision fp32, fp16
 * or int4); `report` is JSON. */
SEMC_API semc_status semc_account(const char* spec_text, semc_buffer** report);

typedef struct semc_train_params {
  size_t scenes;     /* training scenes (check set: scenes/4, new seeds) */
  size_t cond_dim;   /* 0 (unconditional) or >= 8 */
  size_t epochs;
  size_t batch_size;
  double learning_rate;
} semc_train_params;

SEMC_API void semc_train_params_default(semc_train_params* params);

/* Trains the toy generator on synthetic scene tiles and writes an SCM1
 * checkpoint to `model_path`; `report` is JSON (losses per epoch, check
 * losses with and without conditions). */
SEMC_API semc_status semc_train_toy(const semc_experiment* exp, const semc_train_params* params,
                                    const char* model_path, semc_buffer** report);

/* Finite-difference gradient check of the four training losses and the
 * weight endpoint identities on a random problem; `report` is JSON. */
SEMC_API semc_status semc_losses_check(uint64_t seed, semc_buffer** report);

#ifdef __cplusplus
}
#endif

#endif /* SEMCOMM_SEMCOMM_H */
