// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace blockeig {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// -- construction / shape errors ------------------------------------------

class BlockTooLarge : public Error {
public:
    using Error::Error;
};

class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

class DuplicateEntry : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NotStrictlyLower : public Error {
public:
    using Error::Error;
};

class MisalignedTiles : public Error {
public:
    using Error::Error;
};

class BadParams : public Error {
public:
    using Error::Error;
};

// -- numerical errors ------------------------------------------------------

class NotPositiveDefinite : public Error {
public:
    NotPositiveDefinite(const std::string& msg, int pivot_index)
        : Error(msg), pivot(pivot_index) {}
    int pivot;  ///< index of the first non-positive pivot
};

class SingularTriangular : public Error {
public:
    using Error::Error;
};

class SingularProjection : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

class BasisDegenerate : public Error {
public:
    using Error::Error;
};

class BreakdownUnrecoverable : public Error {
public:
    using Error::Error;
};

// -- distributed-layer errors ----------------------------------------------

class EvenNd : public Error {
public:
    using Error::Error;
};

class ProtocolDeadlock : public Error {
public:
    using Error::Error;
};

// -- I/O errors --------------------------------------------------------------

class ParseError : public Error {
public:
    using Error::Error;
};

class NotSymmetricHeader : public Error {
public:
    using Error::Error;
};

}  // namespace blockeig
