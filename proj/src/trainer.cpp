// see headers
