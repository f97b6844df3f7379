/* C interface to the vpkit core. Every call returns a vpk_status; on failure
 * vpk_last_error() holds a message for the calling thread. Strings returned
 * through char** out-parameters are heap-allocated and must be released with
 * vpk_free(). Structured values travel as JSON text. */
#ifndef VPKIT_H
#define VPKIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(VPKIT_BUILDING_SHARED)
#define VPK_API __attribute__((visibility("default")))
#else
#define VPK_API
#endif

/* Values match vpkit::ErrorCode. */
typedef enum vpk_status {
    VPK_OK = 0,
    VPK_ERR_INVALID_ARGUMENT = 1,
    VPK_ERR_OUT_OF_BOUNDS,
    VPK_ERR_BAD_IMAGE,
    VPK_ERR_DEGENERATE,
    VPK_ERR_MALFORMED_RLE,
    VPK_ERR_EMPTY_PROMPT_SET,
    VPK_ERR_CAPACITY_EXCEEDED,
    VPK_ERR_BAD_GRAD_SHAPE,
    VPK_ERR_BAD_PARAMS_FILE,
    VPK_ERR_EMPTY_MASK,
    VPK_ERR_NO_SAMPLEABLE_PIXELS,
    VPK_ERR_MALFORMED_ANNOTATION,
    VPK_ERR_IO_FAILURE,
    VPK_ERR_UNKNOWN_DOMAIN,
    VPK_ERR_EMPTY_REGIONS,
    VPK_ERR_INCOMPLETE_RESPONSE,
    VPK_ERR_MALFORMED_RESPONSE,
    VPK_ERR_UNSUPPORTED,
    VPK_ERR_DUPLICATE_ID,
    VPK_ERR_IMAGE_TOO_SMALL,
    VPK_ERR_BAD_ALPHA,
    VPK_ERR_SERVICE_UNAVAILABLE,
    VPK_ERR_AUTH_ERROR,
    VPK_ERR_UNSCORABLE_RESPONSE,
    VPK_ERR_MISALIGNED,
    VPK_ERR_DEGENERATE_REFERENCE,
    VPK_ERR_EMPTY_TEXT,
    VPK_ERR_DEGENERATE_IDF,
    VPK_ERR_UNKNOWN_TASK,
    VPK_ERR_NO_OVERLAP,
    VPK_ERR_NOT_FOUND,
    VPK_ERR_BAD_EDIT,
    VPK_ERR_CORRUPT_LOG,
    VPK_ERR_INTERNAL = 99
} vpk_status;

VPK_API const char* vpk_version(void);
VPK_API const char* vpk_status_name(vpk_status status);
/* Message of the last failed call on this thread; "" after a success. */
VPK_API const char* vpk_last_error(void);
VPK_API void vpk_free(void* p);
/* trace | debug | info | warn | error | off */
VPK_API vpk_status vpk_set_log_level(const char* level);

/* --- prompt encoder --------------------------------------------------------- */

typedef struct vpk_encoder vpk_encoder;

/* config_json: {"num_frequencies","hidden_dim","llm_dim","capacity",
 * "fourier_sigma","seed"}; omitted keys keep their defaults. NULL = defaults. */
VPK_API vpk_status vpk_encoder_create(const char* config_json, vpk_encoder** out);
VPK_API vpk_status vpk_encoder_load(const char* path, vpk_encoder** out);
VPK_API vpk_status vpk_encoder_save(const vpk_encoder* enc, const char* path);
VPK_API void vpk_encoder_destroy(vpk_encoder* enc);
/* prompts_json: [{"kind":"box","coords":[x1,y1,x2,y2]}, ...].
 * out: {"rows","cols","validity":[...],"tokens":[[row]...]} */
VPK_API vpk_status vpk_encoder_embed(const vpk_encoder* enc, const char* prompts_json, char** out_json);
/* out: {"max_relative_error","worst_tensor","entries_checked","max_frozen_gradient"} */
VPK_API vpk_status vpk_encoder_grad_check(const char* config_json, uint64_t seed, char** out_json);

/* --- augmentation ------------------------------------------------------------ */

VPK_API vpk_status vpk_jitter_box(const double box[4], double sigma_scale, uint64_t seed, double out[4]);

/* --- ingest and construction --------------------------------------------------- */

/* Writes AnnotationRecord JSONL. summary: {"records","skipped_compressed_rle",
 * "skipped_empty_masks","inflated_boxes"} */
VPK_API vpk_status vpk_ingest(const char* manifest_path, const char* out_path, char** summary_json);

/* task: stage1-box | stage1-point | invert | brief | reconstruct-qa | all |
 * baseline-coords. options_json: {"manifest" or "records" (for
 * baseline-coords: "samples"), "seed", "templates", "augment", "capacity"}.
 * Writes sample JSONL to out_path. summary: {"samples", ...per-task counts} */
VPK_API vpk_status vpk_construct(const char* task, const char* options_json, const char* out_path,
                                 char** summary_json);

/* --- SoM rendering -------------------------------------------------------------- */

/* style: natural | ocr | alpha. info: {"sha256","chips":[[x0,y0,x1,y1]...]} */
VPK_API vpk_status vpk_render_som(const char* image_path, const char* prompts_json, const char* style,
                                  const char* out_png_path, char** info_json);

/* --- judge / chat client ---------------------------------------------------------- */

typedef struct vpk_judge vpk_judge;

/* config_json: {"base_url","model","api_key_env","max_concurrency",
 * "max_attempts","backoff_ms","timeout_s","cache_dir","temperature"} */
VPK_API vpk_status vpk_judge_create(const char* config_json, vpk_judge** out);
VPK_API void vpk_judge_destroy(vpk_judge* judge);
VPK_API vpk_status vpk_judge_complete(vpk_judge* judge, const char* prompt, const uint8_t* png, size_t png_len,
                                      char** out_text);
/* rubric NULL = bundled rubric; reference may be NULL. */
VPK_API vpk_status vpk_judge_score(vpk_judge* judge, const char* rubric, const uint8_t* png, size_t png_len,
                                   const char* question, const char* answer, const char* reference, int* out_score,
                                   char** out_rationale);
/* out: {"network_requests","cache_hits","retries"} */
VPK_API vpk_status vpk_judge_stats(const vpk_judge* judge, char** out_json);

/* GPT-4V style generation over records, completions served by `judge`.
 * options_json: {"manifest" or "records", "templates", "reject", "mark_kind"}. */
VPK_API vpk_status vpk_generate_gpt4v(vpk_judge* judge, const char* options_json, const char* out_path,
                                      char** summary_json);

/* --- metrics -------------------------------------------------------------------------- */

/* cands: {"id": "text"}; refs: {"id": ["ref", ...]}. out: {"corpus","per_item":{}} */
VPK_API vpk_status vpk_cider(const char* candidates_json, const char* references_json, char** out_json);
VPK_API vpk_status vpk_semantic_iou(const char* pred, const char* gt, double* out);
/* Hashed bag-of-stems embedder. */
VPK_API vpk_status vpk_semantic_similarity(const char* pred, const char* gt, double* out);
VPK_API vpk_status vpk_meteor_lite(const char* candidate, const char* references_json, double* out);
/* items: [{"response","class_a","class_b","gt_class"}] */
VPK_API vpk_status vpk_binary_choice_accuracy(const char* items_json, double* out);

/* --- benchmark evaluation ----------------------------------------------------------------- */

/* options_json: {"use_judge", "rubric" (text) or "rubric_path", "image_root"}.
 * judge may be NULL when use_judge is false. out: report JSON. */
VPK_API vpk_status vpk_eval_run(const char* bench_path, const char* preds_path, const char* options_json,
                                vpk_judge* judge, char** out_report_json);
/* format: json | table */
VPK_API vpk_status vpk_eval_render(const char* report_json, const char* format, char** out_text);

/* --- curation ------------------------------------------------------------------------------ */

typedef struct vpk_curation vpk_curation;
typedef struct vpk_server vpk_server;

VPK_API vpk_status vpk_curation_open(const char* candidates_path, const char* log_path, vpk_curation** out);
VPK_API void vpk_curation_close(vpk_curation* store);
/* out: {"total","pending","accepted","rejected","edited"} */
VPK_API vpk_status vpk_curation_counts(const vpk_curation* store, char** out_json);
/* *out_sample_json is NULL when nothing is pending. */
VPK_API vpk_status vpk_curation_next(vpk_curation* store, const char* reviewer, char** out_sample_json);
/* decision: {"sample_id","reviewer","action","note","edit"?}. out: {"status",...} */
VPK_API vpk_status vpk_curation_record(vpk_curation* store, const char* decision_json, char** out_state_json);
/* filter: accepted (accepted + edited) | edited | rejected | pending | all */
VPK_API vpk_status vpk_curation_export(const vpk_curation* store, const char* filter, char** out_jsonl);

/* static_dir may be NULL. */
VPK_API vpk_status vpk_server_create(vpk_curation* store, const char* static_dir, vpk_server** out);
/* port 0 picks a free port. */
VPK_API vpk_status vpk_server_bind(vpk_server* server, const char* host, int port, int* out_port);
/* Blocks until vpk_server_stop. */
VPK_API vpk_status vpk_server_listen(vpk_server* server);
VPK_API void vpk_server_stop(vpk_server* server);
VPK_API void vpk_server_destroy(vpk_server* server);

#ifdef __cplusplus
}
#endif

#endif /* VPKIT_H */
