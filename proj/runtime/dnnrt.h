/* SPDX-License-Identifier: Apache-2.0 */
/*
 * dnnrt: operator interface for code emitted by tinyforge.
 *
 * Weight tensors live in one constant byte array laid out as a TFWS stream
 * (see docs/formats.md). Emitted code passes the payload base plus a
 * descriptor per tensor; activations come with a dnnrt_act describing their
 * shape and quantization. Implementations must not allocate.
 */
#ifndef DNNRT_H
#define DNNRT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__) || defined(__clang__)
#define DNNRT_ALIGNED(n) __attribute__((aligned(n)))
#else
#define DNNRT_ALIGNED(n)
#endif

#define DNNRT_STREAM_VERSION 1u
#define DNNRT_STREAM_HEADER_BYTES 20u
#define DNNRT_DESCRIPTOR_BYTES 64u

typedef enum {
    DNNRT_OK = 0,
    DNNRT_ERR_MAGIC = 1,
    DNNRT_ERR_VERSION = 2,
    DNNRT_ERR_LENGTH = 3,
    DNNRT_ERR_DTYPE = 4,
    DNNRT_ERR_LAYOUT = 5,
    DNNRT_ERR_SHAPE = 6
} dnnrt_status;

typedef enum { DNNRT_F32 = 0, DNNRT_U8 = 1, DNNRT_I32 = 2 } dnnrt_dtype;
typedef enum { DNNRT_DENSE = 0, DNNRT_CRS = 1 } dnnrt_layout;

/* Mirrors one 64-byte stream descriptor. Offsets are payload-relative. */
typedef struct {
    uint32_t offset;
    uint32_t nbytes;
    uint8_t dtype;
    uint8_t layout;
    uint8_t rank;
    uint8_t index_bytes; /* CRS column index width: 2 or 4 */
    uint32_t dims[4];
    uint32_t nnz;
    uint32_t rows;
    uint32_t cols;
    uint32_t col_ind_offset;
    uint32_t row_ptr_offset;
    double scale;
    int32_t zero_point;
} dnnrt_param;

/* Activation tensor: [c, h, w] (rank-1 tensors use c only, h = w = 1). */
typedef struct {
    uint8_t dtype;
    uint32_t c;
    uint32_t h;
    uint32_t w;
    double scale;
    int32_t zero_point;
} dnnrt_act;

typedef struct {
    int32_t kernel;
    int32_t stride;
    int32_t pad;
    int32_t clamp_min; /* u8 only: lowest output byte (ReLU fusion) */
} dnnrt_conv_attrs;

/* Emitted code checks statuses only when NDEBUG is not defined. */
#ifdef NDEBUG
#define DNNRT_CHECK(call) ((void)(call))
#else
#define DNNRT_CHECK(call)                                                                                              \
    do {                                                                                                               \
        dnnrt_status dnnrt_st_ = (call);                                                                               \
        if (dnnrt_st_ != DNNRT_OK) return dnnrt_st_;                                                                   \
    } while (0)
#endif

/* Verifies magic, version and total length of a stream. */
dnnrt_status dnnrt_stream_check(const uint8_t* stream, uint32_t len);

/* Convolution via im2col. `scratch` holds (C*K*K) x (Hout*Wout) elements. */
dnnrt_status dnnrt_conv2d_f32(const uint8_t* payload, const dnnrt_param* w, const dnnrt_param* b,
                              const dnnrt_conv_attrs* attrs, const dnnrt_act* in, const float* x,
                              const dnnrt_act* out, float* y, float* scratch);
dnnrt_status dnnrt_qlinear_conv_u8(const uint8_t* payload, const dnnrt_param* w, const dnnrt_param* b,
                                   const dnnrt_conv_attrs* attrs, const dnnrt_act* in, const uint8_t* x,
                                   const dnnrt_act* out, uint8_t* y, uint8_t* scratch);

/* y = W x + b, W dense or CRS. */
dnnrt_status dnnrt_linear_f32(const uint8_t* payload, const dnnrt_param* w, const dnnrt_param* b,
                              const dnnrt_act* in, const float* x, const dnnrt_act* out, float* y);
/* Integer matmul with int32 accumulation, requantized with one double multiply
   and rounded half away from zero, clamped to [clamp_min, 255]. */
dnnrt_status dnnrt_qlinear_matmul_u8(const uint8_t* payload, const dnnrt_param* w, const dnnrt_param* b,
                                     int32_t clamp_min, const dnnrt_act* in, const uint8_t* x, const dnnrt_act* out,
                                     uint8_t* y);

dnnrt_status dnnrt_batchnorm_f32(const uint8_t* payload, const dnnrt_param* gamma, const dnnrt_param* beta,
                                 const dnnrt_param* mean, const dnnrt_param* var, double epsilon, const dnnrt_act* in,
                                 const float* x, float* y);

dnnrt_status dnnrt_maxpool_f32(const dnnrt_act* in, const float* x, int32_t pool, const dnnrt_act* out, float* y);
dnnrt_status dnnrt_maxpool_u8(const dnnrt_act* in, const uint8_t* x, int32_t pool, const dnnrt_act* out, uint8_t* y);

dnnrt_status dnnrt_relu_f32(const dnnrt_act* in, const float* x, float* y);
/* max(v, zero_point) */
dnnrt_status dnnrt_relu_u8(const dnnrt_act* in, const uint8_t* x, uint8_t* y);

dnnrt_status dnnrt_softmax_f32(const dnnrt_act* in, const float* x, float* y);
dnnrt_status dnnrt_add_f32(const dnnrt_act* in, const float* a, const float* b, float* y);

/* Copies the tensor unless x == y. */
dnnrt_status dnnrt_flatten(const dnnrt_act* in, const void* x, void* y);

dnnrt_status dnnrt_quantize_linear(const dnnrt_act* in, const float* x, const dnnrt_act* out, uint8_t* y);
dnnrt_status dnnrt_dequantize_linear(const dnnrt_act* in, const uint8_t* x, const dnnrt_act* out, float* y);

#ifdef __cplusplus
}
#endif

#endif /* DNNRT_H */
