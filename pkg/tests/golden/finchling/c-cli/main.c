/*
 * Command-line driver for device "finchling" (document version 1.0).
 * Source document sha256: 561d318a51630076a8c03b5e7a5d961d4cd4ab3c29ee325f9dce04197cca09fc
 *
 * Build:   cc -O2 -o finchling-cli main.c -lm
 * Usage:   ./finchling-cli [host [port]]     interactive driver
 *          ./finchling-cli emit <primitive> <args...>   print a frame, no device
 */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#define CONST_WHEEL_TRACK_M 0.1
#define CONST_MAX_WHEEL_MPS 0.5
#define CONST_PERCENT_PER_MPS 200.0
#define CONST_TICKS_PER_METER 1000.0

static double state_enc_left = 0.0;
static double state_enc_right = 0.0;
static double state_x_m = 0.0;
static double state_y_m = 0.0;
static double state_theta_rad = 0.0;

static double clamp_checked(double x, double lo, double hi) {
    if (lo > hi) {
        fprintf(stderr, "clamp: lower bound %g above upper bound %g\n", lo, hi);
        exit(1);
    }
    return x < lo ? lo : (x > hi ? hi : x);
}

static int put_u8(unsigned char *buf, int off, long v) {
    if (v < 0 || v > 255) { fprintf(stderr, "value %ld out of range for u8\n", v); return -1; }
    buf[off] = (unsigned char)v;
    return 0;
}

static int put_i8(unsigned char *buf, int off, long v) {
    if (v < -128 || v > 127) { fprintf(stderr, "value %ld out of range for i8\n", v); return -1; }
    buf[off] = (unsigned char)(v & 0xFF);
    return 0;
}

static int put_u16be(unsigned char *buf, int off, long v) {
    if (v < 0 || v > 65535) { fprintf(stderr, "value %ld out of range for u16be\n", v); return -1; }
    buf[off] = (unsigned char)((v >> 8) & 0xFF);
    buf[off + 1] = (unsigned char)(v & 0xFF);
    return 0;
}

static int put_i16be(unsigned char *buf, int off, long v) {
    if (v < -32768 || v > 32767) { fprintf(stderr, "value %ld out of range for i16be\n", v); return -1; }
    buf[off] = (unsigned char)((v >> 8) & 0xFF);
    buf[off + 1] = (unsigned char)(v & 0xFF);
    return 0;
}

static long get_u8(const unsigned char *buf, int off) { return (long)buf[off]; }

static long get_i8(const unsigned char *buf, int off) {
    long v = (long)buf[off];
    return v >= 128 ? v - 256 : v;
}

static long get_u16be(const unsigned char *buf, int off) {
    return ((long)buf[off] << 8) | (long)buf[off + 1];
}

static long get_i16be(const unsigned char *buf, int off) {
    long v = get_u16be(buf, off);
    return v >= 32768 ? v - 65536 : v;
}

static int tcp_connect(const char *host, int port) {
    char service[16];
    struct addrinfo hints, *res, *ai;
    int fd = -1;
    snprintf(service, sizeof service, "%d", port);
    memset(&hints, 0, sizeof hints);
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (getaddrinfo(host, service, &hints, &res) != 0) {
        fprintf(stderr, "cannot resolve %s\n", host);
        return -1;
    }
    for (ai = res; ai != NULL; ai = ai->ai_next) {
        fd = socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) fprintf(stderr, "cannot connect to %s:%d\n", host, port);
    return fd;
}

static int send_all(int fd, const unsigned char *buf, int len) {
    int sent = 0;
    while (sent < len) {
        ssize_t n = write(fd, buf + sent, (size_t)(len - sent));
        if (n <= 0) { perror("write"); return -1; }
        sent += (int)n;
    }
    return 0;
}

static int read_exact(int fd, unsigned char *buf, int len) {
    int got = 0;
    while (got < len) {
        ssize_t n = read(fd, buf + got, (size_t)(len - got));
        if (n <= 0) { perror("read"); return -1; }
        got += (int)n;
    }
    return 0;
}

static int read_line(int fd, char *buf, int cap) {
    int got = 0;
    while (got < cap - 1) {
        ssize_t n = read(fd, buf + got, 1);
        if (n <= 0) { perror("read"); return -1; }
        got += 1;
        if (buf[got - 1] == '\n') { buf[got] = '\0'; return 0; }
    }
    fprintf(stderr, "reply line too long\n");
    return -1;
}

static void print_hex(const unsigned char *buf, int len) {
    int i;
    for (i = 0; i < len; i++) printf("%02x", buf[i]);
    printf("\n");
}

/* ------------------------------------------------------------------ */
/* primitives                                                          */
/* ------------------------------------------------------------------ */


static int build_setMotor(unsigned char *buf, double left, double right) {
    memset(buf, 0, 8);
    buf[0] = 0x4D;
    if (put_i8(buf, 1, (long)llround(left)) != 0) return -1;
    if (put_i8(buf, 2, (long)llround(right)) != 0) return -1;
    return 8;
}

static int setMotor(int fd, double left, double right) {
    unsigned char frame[8];
    int n = build_setMotor(frame, left, right);
    if (n < 0) return -1;
    if (send_all(fd, frame, n) != 0) return -1;
    return 0;
}


static int build_keepAlive(unsigned char *buf) {
    memset(buf, 0, 8);
    buf[0] = 0x4B;
    return 8;
}

static int keepAlive(int fd) {
    unsigned char frame[8];
    int n = build_keepAlive(frame);
    if (n < 0) return -1;
    if (send_all(fd, frame, n) != 0) return -1;
    return 0;
}


static int build_readEncoders(unsigned char *buf) {
    memset(buf, 0, 8);
    buf[0] = 0x45;
    return 8;
}

static int readEncoders(int fd, double *ret_left, double *ret_right) {
    unsigned char frame[8];
    int n = build_readEncoders(frame);
    if (n < 0) return -1;
    if (send_all(fd, frame, n) != 0) return -1;
    unsigned char reply[8];
    if (read_exact(fd, reply, 8) != 0) return -1;
    if (reply[0] != 0x65) {
        fprintf(stderr, "readEncoders: unexpected reply 0x%02X\n", reply[0]);
        return -1;
    }
    double f_left = (double)get_i16be(reply, 1);
    double f_right = (double)get_i16be(reply, 3);
    state_enc_left = f_left;
    state_enc_right = f_right;
    *ret_left = f_left;
    *ret_right = f_right;
    return 0;
}


static int build_pollEncoders(unsigned char *buf) {
    memset(buf, 0, 8);
    buf[0] = 0x45;
    return 8;
}

static int pollEncoders(int fd) {
    unsigned char frame[8];
    int n = build_pollEncoders(frame);
    if (n < 0) return -1;
    if (send_all(fd, frame, n) != 0) return -1;
    unsigned char reply[8];
    if (read_exact(fd, reply, 8) != 0) return -1;
    if (reply[0] != 0x65) {
        fprintf(stderr, "pollEncoders: unexpected reply 0x%02X\n", reply[0]);
        return -1;
    }
    double f_left = (double)get_i16be(reply, 1);
    double f_right = (double)get_i16be(reply, 3);
    state_enc_left = f_left;
    state_enc_right = f_right;
    return 0;
}

/* ------------------------------------------------------------------ */
/* interfaces                                                          */
/* ------------------------------------------------------------------ */

static int drive(int fd, double linear, double angular) {
    if (setMotor(fd, clamp_checked(round(((linear - ((angular * CONST_WHEEL_TRACK_M) / 2.0)) * CONST_PERCENT_PER_MPS)), (0.0 - 100.0), 100.0), clamp_checked(round(((linear + ((angular * CONST_WHEEL_TRACK_M) / 2.0)) * CONST_PERCENT_PER_MPS)), (0.0 - 100.0), 100.0)) != 0) return -1;
    (void)fd;
    return 0;
}

static int stop(int fd) {
    if (setMotor(fd, 0.0, 0.0) != 0) return -1;
    (void)fd;
    return 0;
}

static int getEncoders(int fd, double *ret_left, double *ret_right) {
    double out_left = 0.0;
    double out_right = 0.0;
    if (readEncoders(fd, &out_left, &out_right) != 0) return -1;
    *ret_left = out_left;
    *ret_right = out_right;
    (void)fd;
    return 0;
}

static int odometry(int fd, double *ret_x_m, double *ret_y_m, double *ret_theta_rad) {
    *ret_x_m = state_x_m;
    *ret_y_m = state_y_m;
    *ret_theta_rad = state_theta_rad;
    (void)fd;
    return 0;
}

static int poll_periodic(int fd) {
    if (pollEncoders(fd) != 0) return -1;
    (void)fd;
    return 0;
}

static int emit_main(int argc, char **argv) {
    if (argc < 1) {
        fprintf(stderr, "usage: emit <primitive> <args...>\n");
        return 2;
    }
    if (strcmp(argv[0], "setMotor") == 0) {
        if (argc != 3) {
            fprintf(stderr, "setMotor takes 2 argument(s)\n");
            return 2;
        }
        unsigned char frame[8];
        int n = build_setMotor(frame, strtod(argv[1], NULL), strtod(argv[2], NULL));
        if (n < 0) return 1;
        print_hex(frame, n);
        return 0;
    }
    if (strcmp(argv[0], "keepAlive") == 0) {
        if (argc != 1) {
            fprintf(stderr, "keepAlive takes 0 argument(s)\n");
            return 2;
        }
        unsigned char frame[8];
        int n = build_keepAlive(frame);
        if (n < 0) return 1;
        print_hex(frame, n);
        return 0;
    }
    if (strcmp(argv[0], "readEncoders") == 0) {
        if (argc != 1) {
            fprintf(stderr, "readEncoders takes 0 argument(s)\n");
            return 2;
        }
        unsigned char frame[8];
        int n = build_readEncoders(frame);
        if (n < 0) return 1;
        print_hex(frame, n);
        return 0;
    }
    if (strcmp(argv[0], "pollEncoders") == 0) {
        if (argc != 1) {
            fprintf(stderr, "pollEncoders takes 0 argument(s)\n");
            return 2;
        }
        unsigned char frame[8];
        int n = build_pollEncoders(frame);
        if (n < 0) return 1;
        print_hex(frame, n);
        return 0;
    }
    fprintf(stderr, "unknown primitive %s\n", argv[0]);
    return 2;
}

int main(int argc, char **argv) {
    if (argc >= 2 && strcmp(argv[1], "emit") == 0) {
        return emit_main(argc - 2, argv + 2);
    }
    const char *host = "127.0.0.1";
    int port = 9301;
    if (argc >= 2) host = argv[1];
    if (argc >= 3) port = atoi(argv[2]);
    int fd = tcp_connect(host, port);
    if (fd < 0) return 1;
    {
        if (keepAlive(fd) != 0) {
            fprintf(stderr, "on_connect keepAlive failed\n");
            close(fd);
            return 1;
        }
    }

    fprintf(stderr, "connected to %s:%d; commands: drive, stop, getEncoders, odometry, poll, quit\n", host, port);
    char line[512];
    while (fgets(line, sizeof line, stdin) != NULL) {
        char *save = NULL;
        char *cmd = strtok_r(line, " \t\r\n", &save);
        double args[8];
        int nargs = 0;
        char *tok;
        if (cmd == NULL) continue;
        while ((tok = strtok_r(NULL, " \t\r\n", &save)) != NULL && nargs < 8) {
            args[nargs++] = strtod(tok, NULL);
        }
        if (strcmp(cmd, "quit") == 0) break;
        if (strcmp(cmd, "poll") == 0) {
            if (poll_periodic(fd) != 0) fprintf(stderr, "poll: error\n");
            else printf("ok\n");
            continue;
        }
        if (strcmp(cmd, "drive") == 0) {
            if (nargs != 2) {
                fprintf(stderr, "usage: drive <linear> <angular>\n");
                continue;
            }
            if (drive(fd, args[0], args[1]) != 0) {
                fprintf(stderr, "drive: error\n");
                continue;
            }
            printf("ok");
            printf("\n");
            continue;
        }
        if (strcmp(cmd, "stop") == 0) {
            if (nargs != 0) {
                fprintf(stderr, "usage: stop\n");
                continue;
            }
            if (stop(fd) != 0) {
                fprintf(stderr, "stop: error\n");
                continue;
            }
            printf("ok");
            printf("\n");
            continue;
        }
        if (strcmp(cmd, "getEncoders") == 0) {
            if (nargs != 0) {
                fprintf(stderr, "usage: getEncoders\n");
                continue;
            }
            double ret_left = 0.0;
            double ret_right = 0.0;
            if (getEncoders(fd, &ret_left, &ret_right) != 0) {
                fprintf(stderr, "getEncoders: error\n");
                continue;
            }
            printf("ok left=%g right=%g", ret_left, ret_right);
            printf("\n");
            continue;
        }
        if (strcmp(cmd, "odometry") == 0) {
            if (nargs != 0) {
                fprintf(stderr, "usage: odometry\n");
                continue;
            }
            double ret_x_m = 0.0;
            double ret_y_m = 0.0;
            double ret_theta_rad = 0.0;
            if (odometry(fd, &ret_x_m, &ret_y_m, &ret_theta_rad) != 0) {
                fprintf(stderr, "odometry: error\n");
                continue;
            }
            printf("ok x_m=%g y_m=%g theta_rad=%g", ret_x_m, ret_y_m, ret_theta_rad);
            printf("\n");
            continue;
        }
        fprintf(stderr, "unknown command %s\n", cmd);
    }
    close(fd);
    return 0;
}
